"""Command-line entry point: gen, train, eval, plot.

Every command honors --seed, writes a run manifest next to its outputs,
and never mutates its inputs.  Exit codes: 0 success, 2 usage error,
3 numerical failure, 4 data incompatibility, 1 anything else.
Configuration precedence is flags > config file > built-in defaults;
the config file is plain ``key = value`` lines with # comments.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import cntm
from cntm import baselines, graphs, harness, model, plotting

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_USAGE = 2
EXIT_NUMERIC = 3
EXIT_DATA = 4


class UsageError(ValueError):
    pass


class DataError(ValueError):
    pass


def _default_threads() -> int:
    env = os.environ.get("CNTM_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"CNTM_THREADS must be an integer, got {env!r}")
    return os.cpu_count() or 1


def read_config_file(path) -> dict[str, str]:
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def _resolve(args, name: str, cast, default):
    """flags > config file > default."""
    val = getattr(args, name.replace("-", "_"), None)
    if val is not None:
        return val
    if args.config_values and name in args.config_values:
        return cast(args.config_values[name])
    return default


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_path, command: str, config: dict, inputs: list,
                   outputs: list, seed, started: float) -> None:
    manifest = {
        "command": command,
        "config": config,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "seed": seed,
        "version": cntm.__version__,
        "started": started,
        "finished": time.time(),
    }
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    nodes = _resolve(args, "nodes", int, None)
    count = _resolve(args, "count", int, None)
    if nodes is None or count is None:
        raise UsageError("gen requires --nodes and --count")
    if nodes < 2:
        raise UsageError("--nodes must be at least 2")
    if count < 1:
        raise UsageError("--count must be at least 1")
    seed = _resolve(args, "seed", int, 0)
    conditions = _resolve(args, "conditions", int, graphs.DEFAULT_CONDITIONS)
    fraction = _resolve(args, "fraction", float, 0.7)
    started = time.time()
    ds = graphs.generate_dataset(nodes, count, seed, n_conditions=conditions,
                                 fraction=fraction)
    graphs.save_dataset(ds, args.out)
    write_manifest(str(args.out) + ".manifest.json", "gen",
                   {"nodes": nodes, "count": count, "seed": seed,
                    "conditions": conditions, "fraction": fraction},
                   [], [args.out], seed, started)
    print(f"wrote {count} graphs of {nodes} nodes to {args.out}")
    return EXIT_OK


def _train_config(args, threads: int) -> harness.TrainConfig:
    return harness.TrainConfig(
        max_steps=_resolve(args, "steps", int, 2000),
        seed=_resolve(args, "seed", int, 0),
        learning_rate=_resolve(args, "lr", float, 0.001),
        batch_size=_resolve(args, "batch", int, 128),
        clip=_resolve(args, "clip", float, 10.0),
        model=_resolve(args, "model", str, "cntm"),
        controller_width=_resolve(args, "controller-width", int, 128),
        head_width=_resolve(args, "head-width", int, 256),
        mem_rows=_resolve(args, "mem-rows", int, 128),
        mem_cols=_resolve(args, "mem-cols", int, 128),
        walk_length=_resolve(args, "walk", int, 10),
        walk_curriculum=bool(args.curriculum),
        early_stop=not args.no_early_stop,
        eval_every=_resolve(args, "eval-every", int, 200),
        patience=_resolve(args, "patience", int, 20),
        threads=threads,
    )


def cmd_train(args) -> int:
    threads = args.threads if args.threads else _default_threads()
    cfg = _train_config(args, threads)
    if cfg.model not in ("cntm", "lstm"):
        raise UsageError(f"--model must be cntm or lstm, got {cfg.model!r}")
    started = time.time()
    ds = graphs.load_dataset(args.data)
    loss_path = str(args.out) + ".loss.csv"

    def progress(step, loss):
        print(f"step {step:6d}  loss {loss:10.4f}", flush=True)

    result = harness.train(cfg, ds, progress=progress)
    model.save_checkpoint(args.out, result.params, ds.codebook, ds.nodes,
                          ds.conditions, cfg.seed)
    with open(loss_path, "w", encoding="utf-8") as fh:
        fh.write("step,loss\n")
        for s, v in result.loss_log:
            fh.write(f"{s},{v!r}\n")
    write_manifest(str(args.out) + ".manifest.json", "train",
                   {**cfg.__dict__, "data": str(args.data)},
                   [args.data], [args.out, loss_path], cfg.seed, started)
    if result.diverged:
        print("training diverged; checkpoint holds the last good state",
              file=sys.stderr)
        return EXIT_NUMERIC
    print(f"trained {cfg.model} for {result.steps_run} steps "
          f"({result.wall_clock:.1f}s); checkpoint at {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    started = time.time()
    seed = _resolve(args, "seed", int, 0)
    walk = _resolve(args, "walk", int, 10)
    walks_per_graph = _resolve(args, "walks-per-graph", int, 20)
    ds = graphs.load_dataset(args.data)
    params, codebook, nodes, conditions, _ = model.load_checkpoint(args.ckpt)
    if codebook != ds.codebook or nodes != ds.nodes:
        raise DataError(
            "checkpoint and dataset disagree on the symbol codebook; "
            "evaluate against the dataset the model was trained for")
    preds = [
        baselines.NeuralPredictor(params, ds.codebook, ds.nodes),
        baselines.random_predictor(),
        baselines.graph_distance_predictor(),
    ]
    rows = []
    for pred in preds:
        rows += harness.evaluate_predictor(
            pred, ds, walk_length=walk, walks_per_graph=walks_per_graph,
            seed=seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / "metrics.csv"
    summary_path = out_dir / "summary.csv"
    harness.write_metrics(rows, metrics_path)
    harness.write_summary(rows, summary_path)
    write_manifest(out_dir / "manifest.json", "eval",
                   {"walk": walk, "walks_per_graph": walks_per_graph,
                    "seed": seed, "ckpt": str(args.ckpt),
                    "data": str(args.data)},
                   [args.ckpt, args.data], [metrics_path, summary_path],
                   seed, started)
    for name, agg in harness.aggregate(rows).items():
        print(f"{name:16s} edge {agg['edge_accuracy']:.4f}  "
              f"path {agg['path_accuracy']:.4f}")
    return EXIT_OK


def cmd_plot(args) -> int:
    started = time.time()
    rows = harness.read_metrics(args.metrics)
    try:
        stats = harness.compare(rows, args.baseline)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out)
    stats_path = out.with_suffix(".csv")
    plotting.render_box_plot(stats, out)
    plotting.write_box_stats(stats, stats_path)
    write_manifest(str(out) + ".manifest.json", "plot",
                   {"baseline": args.baseline, "metrics": str(args.metrics)},
                   [args.metrics], [out, stats_path], None, started)
    print(f"wrote {out} and {stats_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument plumbing


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(
        prog="cntm",
        description="conditional transition graph benchmark: generate "
                    "datasets, train models, evaluate link predictors, "
                    "plot comparisons")
    top.add_argument("--config", help="key = value configuration file")
    sub = top.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a dataset of split random graphs")
    g.add_argument("--nodes", type=int)
    g.add_argument("--count", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--conditions", type=int)
    g.add_argument("--fraction", type=float)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_gen)

    t = sub.add_parser("train", help="train a model on a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--model", choices=["cntm", "lstm"])
    t.add_argument("--steps", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch", type=int)
    t.add_argument("--clip", type=float)
    t.add_argument("--controller-width", type=int)
    t.add_argument("--head-width", type=int)
    t.add_argument("--mem-rows", type=int)
    t.add_argument("--mem-cols", type=int)
    t.add_argument("--walk", type=int)
    t.add_argument("--curriculum", action="store_true",
                   help="ramp answer-walk length from 1 up to --walk")
    t.add_argument("--eval-every", type=int)
    t.add_argument("--patience", type=int)
    t.add_argument("--no-early-stop", action="store_true")
    t.add_argument("--threads", type=int)
    t.add_argument("--out", required=True)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint plus baselines")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--walk", type=int)
    e.add_argument("--walks-per-graph", type=int)
    e.add_argument("--seed", type=int)
    e.add_argument("--out-dir", required=True)
    e.set_defaults(fn=cmd_eval)

    p = sub.add_parser("plot", help="baseline-relative box plot from metrics")
    p.add_argument("--metrics", required=True)
    p.add_argument("--baseline", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_plot)
    return top


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.config_values = (read_config_file(args.config)
                              if args.config else {})
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (harness.TrainingDiverged,) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (graphs.DatasetParseError, model.CheckpointError,
            graphs.SplitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER
    except Exception as exc:  # pragma: no cover - last-resort guard
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
