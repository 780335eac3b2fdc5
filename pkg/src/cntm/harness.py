"""Training, evaluation and comparison harness.

Training follows the benchmark recipe: batches of episodes (one episode
per graph draw), masked cross-entropy summed per episode, batch-mean
gradients, RMSprop with optional global value clipping, and optional
early stopping on a held-out validation subset of graphs.

Evaluation replays a graph's observed links, then walks the observed
subgraph querying one condition at a time while the predictor chains its
own previous prediction as the implicit current node.  A query is
edge-valid when the predicted link exists in the complete graph, and a
walk is path-valid when every one of its queries is.  Held-out links are
consulted nowhere except inside that validity check.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from cntm import model as M
from cntm.baselines import LinkPredictor, NeuralPredictor
from cntm.graphs import Dataset, Environment, build_episode, sample_walk


class TrainingDiverged(RuntimeError):
    """Loss or gradients became non-finite; the last good state is kept."""


# ---------------------------------------------------------------------------
# initialization and optimization


def xavier_init(shape, seed) -> np.ndarray:
    """Uniform draw on [-b, b] with b = sqrt(6 / (fan_in + fan_out))."""
    shape = tuple(shape)
    if not shape:
        raise ValueError("xavier_init needs at least one dimension")
    if len(shape) >= 2:
        fan_out, fan_in = shape[0], int(np.prod(shape[1:]))
    else:
        fan_in = fan_out = shape[0]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.uniform(-bound, bound, shape)


def init_params(cfg: M.ModelConfig, seed) -> M.ModelParams:
    """Build all trainable tensors; weights Xavier-initialized, biases zero."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    tensors = {}
    for name, shape, kind in M.param_spec(cfg):
        if kind == "xavier":
            data = xavier_init(shape, rng)
        else:
            data = np.zeros(shape)
        tensors[name] = M.Tensor(data, requires_grad=True)
    return M.ModelParams(config=cfg, tensors=tensors)


def rmsprop_step(params: M.ModelParams, grads: dict[str, np.ndarray],
                 state: dict[str, np.ndarray], lr: float, *,
                 rho: float = 0.9, eps: float = 1e-8,
                 clip: float | None = None) -> None:
    """One RMSprop update, in place.

    v <- rho v + (1 - rho) g^2;  theta <- theta - lr g / (sqrt(v) + eps),
    with g first value-clipped to [-clip, clip] when a clip is given.
    """
    for name, t in params.tensors.items():
        g = grads.get(name)
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient for parameter {name!r}")
        if clip is not None and np.isfinite(clip):
            g = np.clip(g, -clip, clip)
        v = state.get(name)
        if v is None:
            v = np.zeros_like(t.data)
            state[name] = v
        v *= rho
        v += (1.0 - rho) * g * g
        t.data = t.data - lr * g / (np.sqrt(v) + eps)


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class TrainConfig:
    """Training knobs; the defaults reproduce the benchmark recipe
    (lr 0.001, batch 128, 256-unit head, 128-unit controller, 128x128
    memory, walk length 10)."""

    max_steps: int
    seed: int = 0
    learning_rate: float = 0.001
    batch_size: int = 128
    clip: float = 10.0
    model: str = "cntm"                    # "cntm" or "lstm"
    controller_width: int = 128
    head_width: int = 256
    mem_rows: int = 128
    mem_cols: int = 128
    shift_width: int = 3
    walk_length: int = 10
    dataset_path: str | None = None
    trainable_memory_init: bool = True
    walk_curriculum: bool = False
    curriculum_threshold: float = 0.75
    curriculum_phase_cap: int = 1200
    early_stop: bool = True
    val_fraction: float = 0.1
    val_walks: int = 8
    eval_every: int = 200
    patience: int = 20
    log_every: int = 50
    threads: int = 1

    def model_config(self, num_nodes: int) -> M.ModelConfig:
        if self.model not in ("cntm", "lstm"):
            raise ValueError(f"unknown model kind {self.model!r}")
        return M.ModelConfig(
            num_nodes=num_nodes,
            controller_width=self.controller_width,
            head_width=self.head_width,
            mem_rows=self.mem_rows,
            mem_cols=self.mem_cols,
            shift_width=self.shift_width,
            use_memory=(self.model == "cntm"),
            trainable_memory_init=self.trainable_memory_init,
        )


@dataclass
class TrainResult:
    params: M.ModelParams
    loss_log: list[tuple[int, float]]
    val_log: list[tuple[int, float]]
    steps_run: int
    best_step: int
    diverged: bool
    wall_clock: float


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class GraphMetrics:
    """Accuracies of one predictor on one graph's evaluation walks.

    edge_accuracy averages the per-walk fraction of valid links over
    walks (which guarantees path_accuracy <= edge_accuracy for walks of
    any length); edge_hits/queries keep the raw per-query tally for
    calibration checks.
    """

    graph_id: int
    predictor: str
    edge_accuracy: float
    path_accuracy: float
    edge_hits: int
    queries: int
    walks: int


@dataclass(frozen=True)
class BoxStats:
    """Five-number summary (plus outliers) of per-graph accuracy
    differences against a baseline predictor.

    Whiskers are the extreme values inside the 1.5 IQR fences; values
    beyond them are listed as outliers.
    """

    predictor: str
    baseline: str
    count: int
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float
    whisker_lo: float
    whisker_hi: float
    outliers: tuple[float, ...]


def percentile(sorted_values, p: float) -> float:
    """Linear-interpolation percentile of pre-sorted data, p in [0, 100]."""
    xs = sorted_values
    if len(xs) == 0:
        raise ValueError("percentile of empty data")
    h = (len(xs) - 1) * (p / 100.0)
    lo = int(np.floor(h))
    hi = min(lo + 1, len(xs) - 1)
    return float(xs[lo] + (h - lo) * (xs[hi] - xs[lo]))


def compare(rows: list[GraphMetrics], baseline: str) -> list[BoxStats]:
    """Per-predictor box statistics of path-accuracy differences vs the
    baseline, computed per graph.  All predictors must have been
    evaluated on the identical graph set."""
    by_pred: dict[str, dict[int, float]] = {}
    for r in rows:
        by_pred.setdefault(r.predictor, {})[r.graph_id] = r.path_accuracy
    if baseline not in by_pred:
        raise ValueError(
            f"unknown baseline {baseline!r}; available: {sorted(by_pred)}")
    base = by_pred[baseline]
    graph_ids = sorted(base)
    stats = []
    for name in sorted(by_pred):
        accs = by_pred[name]
        if sorted(accs) != graph_ids:
            raise ValueError(
                f"predictor {name!r} was evaluated on a different graph set "
                f"than {baseline!r}")
        diffs = sorted(accs[g] - base[g] for g in graph_ids)
        q1 = percentile(diffs, 25.0)
        q3 = percentile(diffs, 75.0)
        iqr = q3 - q1
        lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
        outliers = tuple(d for d in diffs if d < lo_fence or d > hi_fence)
        inside = [d for d in diffs if lo_fence <= d <= hi_fence]
        stats.append(BoxStats(
            predictor=name, baseline=baseline, count=len(diffs),
            minimum=diffs[0], q1=q1, median=percentile(diffs, 50.0),
            q3=q3, maximum=diffs[-1],
            whisker_lo=inside[0] if inside else q1,
            whisker_hi=inside[-1] if inside else q3,
            outliers=outliers,
        ))
    return stats


# ---------------------------------------------------------------------------
# evaluation


def evaluation_walks(dataset: Dataset, graph_id: int, walk_length: int,
                     walks_per_graph: int, seed: int):
    """The evaluation walks for one graph; a pure function of its
    arguments, so every predictor sees identical walks."""
    split = dataset.entries[graph_id]
    obs = split.observed_graph
    env = Environment(graph=obs)
    walks = []
    for k in range(walks_per_graph):
        rng = np.random.default_rng([seed, 0x5EED, graph_id, k])
        walks.append(sample_walk(obs, env, walk_length, rng))
    return walks


def evaluate_predictor(pred: LinkPredictor, dataset: Dataset, *,
                       walk_length: int = 10, walks_per_graph: int = 20,
                       seed: int = 0,
                       graph_ids=None) -> list[GraphMetrics]:
    """Run one predictor over every graph's evaluation walks.

    The predictor chains its own predictions: edge t is
    (previous prediction, condition, new prediction), and it is valid
    exactly when the complete graph contains it.
    """
    rows = []
    ids = range(len(dataset.entries)) if graph_ids is None else graph_ids
    for gid in ids:
        split = dataset.entries[gid]
        delta = split.graph.delta
        pred.describe(split.observed_edges(), dataset.nodes,
                      np.random.SeedSequence([seed, 0xDE5C, gid]))
        walks = evaluation_walks(dataset, gid, walk_length, walks_per_graph, seed)
        edge_ok = 0
        path_ok = 0
        queries = 0
        n_walks = 0
        edge_frac_sum = 0.0
        for walk in walks:
            if not walk:
                continue
            n_walks += 1
            pred.begin_walk(walk[0][0])
            chain: str | None = walk[0][0]
            whole = True
            walk_ok = 0
            for _, cond, _ in walk:
                p = pred.query(cond)
                ok = (p is not None and chain is not None
                      and delta.get((chain, cond)) == p)
                walk_ok += ok
                whole = whole and ok
                chain = p
            edge_ok += walk_ok
            edge_frac_sum += walk_ok / len(walk)
            queries += len(walk)
            path_ok += whole
        rows.append(GraphMetrics(
            graph_id=gid, predictor=pred.name,
            edge_accuracy=edge_frac_sum / n_walks if n_walks else 0.0,
            path_accuracy=path_ok / n_walks if n_walks else 0.0,
            edge_hits=edge_ok, queries=queries, walks=n_walks,
        ))
    return rows


def evaluate_model(params: M.ModelParams, dataset: Dataset, *,
                   walk_length: int = 10, walks_per_graph: int = 20,
                   seed: int = 0, graph_ids=None,
                   name: str | None = None) -> list[GraphMetrics]:
    pred = NeuralPredictor(params, dataset.codebook, dataset.nodes, name=name)
    return evaluate_predictor(pred, dataset, walk_length=walk_length,
                              walks_per_graph=walks_per_graph, seed=seed,
                              graph_ids=graph_ids)


def write_metrics(rows: list[GraphMetrics], path) -> None:
    """Tabular per-graph metrics: one row per (graph, predictor)."""
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["graph_id", "predictor", "edge_accuracy", "path_accuracy",
                    "edge_hits", "queries", "walks"])
        for r in rows:
            w.writerow([r.graph_id, r.predictor, repr(r.edge_accuracy),
                        repr(r.path_accuracy), r.edge_hits, r.queries,
                        r.walks])


def read_metrics(path) -> list[GraphMetrics]:
    import csv

    rows = []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            rows.append(GraphMetrics(
                graph_id=int(rec["graph_id"]), predictor=rec["predictor"],
                edge_accuracy=float(rec["edge_accuracy"]),
                path_accuracy=float(rec["path_accuracy"]),
                edge_hits=int(rec["edge_hits"]),
                queries=int(rec["queries"]), walks=int(rec["walks"])))
    return rows


def write_summary(rows: list[GraphMetrics], path) -> None:
    """Aggregate record: per-predictor means over graphs."""
    import csv

    agg = aggregate(rows)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["predictor", "graphs", "edge_accuracy", "path_accuracy"])
        for name, a in agg.items():
            w.writerow([name, a["graphs"], repr(a["edge_accuracy"]),
                        repr(a["path_accuracy"])])


def aggregate(rows: list[GraphMetrics]) -> dict[str, dict[str, float]]:
    """Per-predictor means over graphs."""
    by_pred: dict[str, list[GraphMetrics]] = {}
    for r in rows:
        by_pred.setdefault(r.predictor, []).append(r)
    out = {}
    for name, rs in sorted(by_pred.items()):
        out[name] = {
            "graphs": len(rs),
            "edge_accuracy": float(np.mean([r.edge_accuracy for r in rs])),
            "path_accuracy": float(np.mean([r.path_accuracy for r in rs])),
        }
    return out


# ---------------------------------------------------------------------------
# training


def _episode_for(dataset: Dataset, graph_ids, cfg: TrainConfig,
                 step_idx: int, slot: int, walk_len: int):
    rng = np.random.default_rng([cfg.seed, 0xE915, step_idx, slot])
    gid = graph_ids[int(rng.integers(len(graph_ids)))]
    return build_episode(dataset.entries[gid], None, walk_len, rng)


def _batch_gradients(params: M.ModelParams, dataset: Dataset, graph_ids,
                     cfg: TrainConfig, step_idx: int, slots,
                     walk_len: int) -> tuple[dict, float]:
    """Sum of episode gradients and losses over the given batch slots."""
    from cntm import autodiff as ad

    params.zero_grad()
    total = 0.0
    for slot in slots:
        episode = _episode_for(dataset, graph_ids, cfg, step_idx, slot,
                               walk_len)
        with ad.record() as rec:
            loss = M.episode_loss(episode, params, dataset.codebook,
                                  dataset.nodes)
            rec.backward(loss)
        total += float(loss.data)
    grads = {name: t.grad for name, t in params.tensors.items()
             if t.grad is not None}
    return grads, total


# worker-process cache for parallel batch evaluation
_WORKER: dict = {}


def _pool_init(dataset, cfg, graph_ids, mcfg):
    _WORKER["dataset"] = dataset
    _WORKER["cfg"] = cfg
    _WORKER["graph_ids"] = graph_ids
    _WORKER["params"] = M.ModelParams(config=mcfg, tensors={
        name: M.Tensor(np.zeros(shape), requires_grad=True)
        for name, shape, _ in M.param_spec(mcfg)
    })


def _pool_shard(args):
    values, step_idx, slots, walk_len = args
    params = _WORKER["params"]
    params.load_values(values)
    return _batch_gradients(params, _WORKER["dataset"], _WORKER["graph_ids"],
                            _WORKER["cfg"], step_idx, slots, walk_len)


class _BatchRunner:
    """Computes batch gradient sums, optionally across worker processes.

    Episodes are seeded by (seed, step, slot) only, and shard partial
    sums are reduced in slot order, so results are reproducible for a
    fixed thread count.
    """

    def __init__(self, params, dataset, graph_ids, cfg):
        self.params = params
        self.dataset = dataset
        self.graph_ids = graph_ids
        self.cfg = cfg
        self.pool = None
        self.shards = None
        n = max(1, min(cfg.threads, cfg.batch_size))
        if n > 1:
            import multiprocessing as mp

            slots = list(range(cfg.batch_size))
            bounds = np.linspace(0, len(slots), n + 1).astype(int)
            self.shards = [slots[bounds[i]:bounds[i + 1]] for i in range(n)
                           if bounds[i] < bounds[i + 1]]
            ctx = mp.get_context("fork")
            self.pool = ctx.Pool(len(self.shards), initializer=_pool_init,
                                 initargs=(dataset, cfg, graph_ids,
                                           params.config))

    def run(self, step_idx: int, walk_len: int) -> tuple[dict, float]:
        if self.pool is None:
            return _batch_gradients(self.params, self.dataset, self.graph_ids,
                                    self.cfg, step_idx,
                                    range(self.cfg.batch_size), walk_len)
        values = self.params.values_copy()
        results = self.pool.map(
            _pool_shard,
            [(values, step_idx, shard, walk_len) for shard in self.shards])
        grads: dict[str, np.ndarray] = {}
        total = 0.0
        for shard_grads, shard_loss in results:
            total += shard_loss
            for name, g in shard_grads.items():
                if name in grads:
                    grads[name] += g
                else:
                    grads[name] = g
        return grads, total

    def close(self):
        if self.pool is not None:
            self.pool.terminate()
            self.pool.join()
            self.pool = None


def train_val_split(dataset: Dataset, cfg: TrainConfig) -> tuple[list[int], list[int]]:
    """Deterministic graph-level split for early stopping."""
    n = len(dataset.entries)
    if not cfg.early_stop or n < 3:
        return list(range(n)), []
    rng = np.random.default_rng([cfg.seed, 0x7A11])
    n_val = max(1, int(round(cfg.val_fraction * n)))
    perm = rng.permutation(n)
    val = sorted(int(i) for i in perm[:n_val])
    trainable = sorted(int(i) for i in perm[n_val:])
    return trainable, val


def train(cfg: TrainConfig, dataset: Dataset, *, progress=None,
          stop_fn=None) -> TrainResult:
    """Train a model on a dataset; deterministic given the config seed.

    Divergence (non-finite loss or gradients) stops training without
    applying the offending update, so the returned parameters are the
    last good state (or the best validation state when early stopping
    is active).  ``stop_fn(step, params) -> bool``, polled every
    ``eval_every`` steps, allows callers to end training early, e.g. on
    reaching a target accuracy.
    """
    t0 = time.perf_counter()
    mcfg = cfg.model_config(len(dataset.nodes))
    params = init_params(mcfg, np.random.default_rng([cfg.seed, 0x1217]))
    opt_state: dict[str, np.ndarray] = {}
    train_ids, val_ids = train_val_split(dataset, cfg)

    loss_log: list[tuple[int, float]] = []
    val_log: list[tuple[int, float]] = []
    best_values = None
    best_acc = -1.0
    best_step = 0
    bad_evals = 0
    diverged = False
    steps_run = 0
    # with the curriculum on, answer walks lengthen as validation recall
    # crosses the threshold (or the phase hits its step cap):
    # 1, 2, 4, ... up to the configured length
    walk_len = 1 if cfg.walk_curriculum else cfg.walk_length
    phase_start = 0

    runner = _BatchRunner(params, dataset, train_ids, cfg)
    for step_idx in range(cfg.max_steps):
        grads_sum, loss_sum = runner.run(step_idx, walk_len)
        mean_loss = loss_sum / cfg.batch_size
        if not np.isfinite(mean_loss):
            diverged = True
            break
        grads = {k: g / cfg.batch_size for k, g in grads_sum.items()}
        try:
            rmsprop_step(params, grads, opt_state, cfg.learning_rate,
                         clip=cfg.clip)
        except TrainingDiverged:
            diverged = True
            break
        steps_run = step_idx + 1
        if step_idx % cfg.log_every == 0 or step_idx == cfg.max_steps - 1:
            loss_log.append((step_idx, mean_loss))
            if progress is not None:
                progress(step_idx, mean_loss)
        if cfg.eval_every and (step_idx + 1) % cfg.eval_every == 0:
            if val_ids:
                rows = evaluate_model(params, dataset, walk_length=walk_len,
                                      walks_per_graph=cfg.val_walks,
                                      seed=cfg.seed, graph_ids=val_ids)
                # edge accuracy: finer-grained than the all-or-nothing
                # path flag, so plateaus register earlier
                acc = aggregate(rows)[rows[0].predictor]["edge_accuracy"]
                val_log.append((step_idx + 1, acc))
                if walk_len < cfg.walk_length:
                    capped = step_idx + 1 - phase_start >= cfg.curriculum_phase_cap
                    if acc >= cfg.curriculum_threshold or capped:
                        walk_len = min(2 * walk_len, cfg.walk_length)
                        phase_start = step_idx + 1
                        best_acc, bad_evals = -1.0, 0
                else:
                    # best tracking and patience only at full difficulty
                    if acc > best_acc:
                        best_acc = acc
                        best_values = params.values_copy()
                        best_step = step_idx + 1
                        bad_evals = 0
                    else:
                        bad_evals += 1
                        if bad_evals >= cfg.patience:
                            break
            if stop_fn is not None and stop_fn(step_idx + 1, params):
                break

    runner.close()
    if best_values is not None:
        params.load_values(best_values)
    else:
        best_step = steps_run
    return TrainResult(params=params, loss_log=loss_log, val_log=val_log,
                       steps_run=steps_run, best_step=best_step,
                       diverged=diverged, wall_clock=time.perf_counter() - t0)
