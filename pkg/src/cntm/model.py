"""The conditional-graph sequence model and its memory-free ablation.

Per time step the model consumes a 90-element context vector (current
node code, environment condition code, target code; all-zero slots mean
"undefined"), runs a one-hidden-layer feed-forward controller, writes to
and reads from the external memory, combines controller output and read
vector linearly into a coding U, and feeds U to an LSTM head whose
softmax projects onto the node classes plus one extra "undefined" class.

With ``use_memory=False`` the same pipeline simply drops the memory
block (U depends on the controller alone), which is the plain-LSTM
ablation used as a baseline.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from cntm import autodiff as ad
from cntm import ntm
from cntm.autodiff import Tensor
from cntm.graphs import CODE_BITS, Episode, SymbolCodebook

CONTEXT_LEN = 3 * CODE_BITS

CHECKPOINT_FORMAT = "cntm-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Unreadable or corrupt checkpoint file."""


@dataclass(frozen=True)
class ModelConfig:
    num_nodes: int
    controller_width: int = 128
    head_width: int = 256
    mem_rows: int = 128
    mem_cols: int = 128
    shift_width: int = 3
    use_memory: bool = True
    trainable_memory_init: bool = True

    @property
    def num_classes(self) -> int:
        # all nodes plus the reserved "undefined" class
        return self.num_nodes + 1

    @property
    def u_width(self) -> int:
        return self.controller_width

    def to_dict(self) -> dict:
        return {
            "num_nodes": self.num_nodes,
            "controller_width": self.controller_width,
            "head_width": self.head_width,
            "mem_rows": self.mem_rows,
            "mem_cols": self.mem_cols,
            "shift_width": self.shift_width,
            "use_memory": self.use_memory,
            "trainable_memory_init": self.trainable_memory_init,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(**d)


def param_spec(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...], str]]:
    """Name, shape and init kind ("xavier"/"zeros") of every trainable tensor."""
    H, D, n, m = cfg.controller_width, cfg.head_width, cfg.mem_rows, cfg.mem_cols
    in_width = CONTEXT_LEN + (m if cfg.use_memory else 0)
    spec = [
        ("controller.W", (H, in_width), "xavier"),
        ("controller.b", (H,), "zeros"),
    ]
    if cfg.use_memory:
        sizes = ntm.head_field_sizes(m, cfg.shift_width)
        for prefix, fields in (("read", ntm.READ_FIELDS), ("write", ntm.WRITE_FIELDS)):
            for f in fields:
                spec.append((f"{prefix}.{f}.W", (sizes[f], H), "xavier"))
                spec.append((f"{prefix}.{f}.b", (sizes[f],), "zeros"))
        spec.append(("out.W2", (cfg.u_width, m), "xavier"))
        spec.append(("memory.init", (n, m), "xavier"))
        # episode-start head weightings, stored as softmax logits (zero
        # init gives the uniform weighting; training can sharpen them)
        spec.append(("read.w0", (n,), "zeros"))
        spec.append(("write.w0", (n,), "zeros"))
    spec += [
        ("out.W1", (cfg.u_width, H), "xavier"),
        ("out.b", (cfg.u_width,), "zeros"),
        ("head.W", (4 * D, cfg.u_width + D), "xavier"),
        ("head.b", (4 * D,), "zeros"),
        ("head.proj.W", (cfg.num_classes, D), "xavier"),
        ("head.proj.b", (cfg.num_classes,), "zeros"),
    ]
    return spec


@dataclass
class ModelParams:
    """Every trainable tensor of one model, keyed by name."""

    config: ModelConfig
    tensors: dict[str, Tensor]

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def values_copy(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.tensors.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for k, v in values.items():
            self.tensors[k].data = np.asarray(v, dtype=np.float64)

    def head_projections(self) -> dict[str, tuple[Tensor, Tensor]]:
        out = {}
        for prefix, fields in (("read", ntm.READ_FIELDS), ("write", ntm.WRITE_FIELDS)):
            for f in fields:
                out[f"{prefix}.{f}"] = (self.tensors[f"{prefix}.{f}.W"],
                                        self.tensors[f"{prefix}.{f}.b"])
        return out

    def count(self) -> int:
        return sum(t.data.size for t in self.tensors.values())


@dataclass
class ContextVector:
    """One 90-element model input: [node code, condition code, target code]."""

    x: np.ndarray
    c: np.ndarray
    y_slot: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.x, self.c, self.y_slot])


def encode_context(node_id: str | None, cond_id: str | None,
                   target_id: str | None, codebook: SymbolCodebook) -> ContextVector:
    """Encode a (possibly partial) triple; absent ids become zero slots."""
    return ContextVector(
        x=codebook.encode(node_id),
        c=codebook.encode(cond_id),
        y_slot=codebook.encode(target_id),
    )


@dataclass
class StepState:
    """Recurrent state carried across the steps of one episode."""

    memory: ntm.MemoryState | None
    h: Tensor
    c: Tensor
    projections: dict = field(default_factory=dict)
    stacked: tuple | None = None

    def snapshot(self) -> "StepState":
        """Detached value copy (for replaying from a fixed point)."""
        mem = None
        if self.memory is not None:
            mem = ntm.MemoryState(
                M=Tensor(self.memory.M.data.copy()),
                w_read=Tensor(self.memory.w_read.data.copy()),
                w_write=Tensor(self.memory.w_write.data.copy()),
                r=Tensor(self.memory.r.data.copy()),
            )
        return StepState(memory=mem, h=Tensor(self.h.data.copy()),
                         c=Tensor(self.c.data.copy()),
                         projections=self.projections, stacked=self.stacked)


def initial_state(params: ModelParams) -> StepState:
    cfg = params.config
    memory = None
    projections = {}
    stacked = None
    if cfg.use_memory:
        M0 = params["memory.init"]
        if not cfg.trainable_memory_init:
            M0 = Tensor(M0.data)
        memory = ntm.fresh_state(M0,
                                 w_read=ad.softmax(params["read.w0"]),
                                 w_write=ad.softmax(params["write.w0"]))
        projections = params.head_projections()
        stacked = ntm.stack_head_projections(projections, cfg.mem_cols,
                                             cfg.shift_width)
    return StepState(
        memory=memory,
        h=Tensor(np.zeros(cfg.head_width)),
        c=Tensor(np.zeros(cfg.head_width)),
        projections=projections,
        stacked=stacked,
    )


def controller_forward(v, r_prev: Tensor | None, params: ModelParams) -> Tensor:
    """One hidden tanh layer over the context (and read vector, if any)."""
    vec = v.vector if isinstance(v, ContextVector) else np.asarray(v)
    if r_prev is None:
        z = Tensor(vec)
    else:
        z = ad.concat([Tensor(vec), r_prev])
    return ad.tanh(ad.linear(params["controller.W"], z, params["controller.b"]))


def ntm_output(h: Tensor, r: Tensor | None, params: ModelParams) -> Tensor:
    """The coding U: a purely linear blend of controller output and read."""
    if r is None:
        return ad.linear(params["out.W1"], h, params["out.b"])
    return ad.linear2(params["out.W1"], h, params["out.W2"], r, params["out.b"])


def output_head_forward(U: Tensor, state: StepState, params: ModelParams
                        ) -> tuple[Tensor, StepState]:
    """Advance the LSTM head one step and project to class probabilities."""
    h2, c2 = ad.lstm_cell(U, state.h, state.c, params["head.W"], params["head.b"])
    new_state = StepState(memory=state.memory, h=h2, c=c2,
                          projections=state.projections)
    logits = ad.linear(params["head.proj.W"], h2, params["head.proj.b"])
    return ad.softmax(logits), new_state


def step(v, state: StepState, params: ModelParams, *,
         need_probs: bool = True) -> tuple[Tensor | None, StepState]:
    """One full time step; returns (class probabilities, new state).

    ``need_probs=False`` skips the output projection (the recurrent state
    does not depend on it), which speeds up description-phase steps.
    """
    cfg = params.config
    if cfg.use_memory:
        mem = state.memory
        h = controller_forward(v, mem.r, params)
        read_p, write_p = ntm.head_params_fused(h, state.stacked)
        mem2 = ntm.step_memory(mem, read_p, write_p)
        U = ntm_output(h, mem2.r, params)
        new_mem = mem2
    else:
        h = controller_forward(v, None, params)
        U = ntm_output(h, None, params)
        new_mem = None
    h2, c2 = ad.lstm_cell(U, state.h, state.c, params["head.W"], params["head.b"])
    new_state = StepState(memory=new_mem, h=h2, c=c2,
                          projections=state.projections, stacked=state.stacked)
    if not need_probs:
        return None, new_state
    logits = ad.linear(params["head.proj.W"], h2, params["head.proj.b"])
    return ad.softmax(logits), new_state


def class_of(symbol: str | None, nodes: tuple[str, ...]) -> int:
    """Class index of a node symbol; the last class is "undefined"."""
    if symbol is None:
        return len(nodes)
    return nodes.index(symbol)


def run_description(episode: Episode, state: StepState, params: ModelParams,
                    codebook: SymbolCodebook) -> StepState:
    for s, c, t in episode.description:
        _, state = step(encode_context(s, c, t, codebook), state, params,
                        need_probs=False)
    return state


def episode_loss(episode: Episode, params: ModelParams,
                 codebook: SymbolCodebook, nodes: tuple[str, ...]) -> Tensor:
    """Masked cross entropy: the negative log-probability of each target,
    summed over answer-phase steps only."""
    class_index = {q: i for i, q in enumerate(nodes)}
    state = initial_state(params)
    state = run_description(episode, state, params, codebook)
    loss = None
    for t, cond in enumerate(episode.query_conditions):
        node = episode.first_node if t == 0 else None
        probs, state = step(encode_context(node, cond, None, codebook),
                            state, params)
        target = episode.targets[t]
        try:
            idx = class_index[target]
        except KeyError:
            raise ValueError(f"target {target!r} outside the class space") from None
        term = ad.nll(probs, idx)
        loss = term if loss is None else ad.add(loss, term)
    if loss is None:
        return Tensor(np.zeros(()))
    return loss


def predict_transition(current: str | None, cond: str, state: StepState,
                       params: ModelParams, codebook: SymbolCodebook,
                       nodes: tuple[str, ...]) -> tuple[str | None, StepState]:
    """Greedy next-node prediction for one query.

    Returns the argmax class mapped back to a node symbol (ties resolve
    to the lowest class index); the reserved "undefined" class maps to
    None, an explicit no-prediction marker.
    """
    probs, state = step(encode_context(current, cond, None, codebook),
                        state, params)
    cls = int(np.argmax(probs.data))
    return (nodes[cls] if cls < len(nodes) else None), state


# ---------------------------------------------------------------------------
# checkpoints


def _canonical_payload(payload: dict) -> bytes:
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()


def save_checkpoint(path, params: ModelParams, codebook: SymbolCodebook,
                    nodes: tuple[str, ...], conditions: tuple[str, ...],
                    seed: int) -> None:
    """Versioned, lossless container: named float64 tensors plus the
    configuration, symbol space and RNG seed."""
    tensors = {
        name: {
            "shape": list(t.data.shape),
            "data": base64.b64encode(
                np.ascontiguousarray(t.data).tobytes()).decode("ascii"),
        }
        for name, t in params.tensors.items()
    }
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": params.config.to_dict(),
        "seed": seed,
        "nodes": list(nodes),
        "conditions": list(conditions),
        "codebook": {"symbols": list(codebook.symbols),
                     "codes": list(codebook.codes)},
        "tensors": tensors,
    }
    blob = _canonical_payload(payload)
    doc = {"payload": payload, "sha256": hashlib.sha256(blob).hexdigest()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_checkpoint(path):
    """Inverse of save_checkpoint; returns (params, codebook, nodes,
    conditions, seed)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    payload = doc.get("payload", {})
    if doc.get("sha256") != hashlib.sha256(_canonical_payload(payload)).hexdigest():
        raise CheckpointError(f"checkpoint {path}: checksum mismatch")
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"checkpoint {path}: unknown format")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint {path}: unsupported version {payload.get('version')}")
    cfg = ModelConfig.from_dict(payload["config"])
    tensors = {}
    for name, rec in payload["tensors"].items():
        raw = base64.b64decode(rec["data"])
        arr = np.frombuffer(raw, dtype=np.float64).reshape(rec["shape"]).copy()
        tensors[name] = Tensor(arr, requires_grad=True)
    params = ModelParams(config=cfg, tensors=tensors)
    cb = payload["codebook"]
    codebook = SymbolCodebook(symbols=tuple(cb["symbols"]),
                              codes=tuple(int(c) for c in cb["codes"]))
    return (params, codebook, tuple(payload["nodes"]),
            tuple(payload["conditions"]), payload["seed"])
