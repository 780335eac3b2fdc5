"""External-memory block: addressing, reading and writing.

A memory is an n x m matrix accessed through weightings over its rows.
Both the read and the write weighting are produced the same way: a
content pass (cosine similarity against a query key, scaled by a key
strength and normalized), then a location pass (interpolation with the
previous weighting, circular shift, sharpening).  Reading is a weighted
sum of rows; writing erases and adds under the write weighting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cntm import autodiff as ad
from cntm.autodiff import Tensor


@dataclass
class MemoryState:
    """Memory matrix plus the recurrent addressing state of both heads."""

    M: Tensor            # n x m
    w_read: Tensor       # distribution over the n rows
    w_write: Tensor      # distribution over the n rows
    r: Tensor            # last read vector, length m


@dataclass
class HeadParams:
    """Addressing parameters emitted by the controller for one head.

    The activation mapping guarantees the ranges: beta >= 0 (relu),
    g in [0, 1] (sigmoid), s a distribution (softmax), gamma >= 1
    (oneplus).  Erase/add vectors are only present on the write head,
    with e in [0, 1]^m (sigmoid) and a unconstrained.
    """

    k: Tensor
    beta: Tensor
    g: Tensor
    s: Tensor
    gamma: Tensor
    e: Tensor | None = None
    a: Tensor | None = None


#: per-head parameter blocks, in projection order
READ_FIELDS = ("k", "beta", "g", "s", "gamma")
WRITE_FIELDS = READ_FIELDS + ("e", "a")

_ACTIVATION_FOR = {
    "k": None,
    "beta": "relu",
    "g": "sigmoid",
    "s": "softmax",
    "gamma": "oneplus",
    "e": "sigmoid",
    "a": None,
}


def head_field_sizes(mem_cols: int, shift_width: int) -> dict[str, int]:
    return {
        "k": mem_cols,
        "beta": 1,
        "g": 1,
        "s": shift_width,
        "gamma": 1,
        "e": mem_cols,
        "a": mem_cols,
    }


def head_params_from_controller(h: Tensor, projections) -> tuple[HeadParams, HeadParams]:
    """Map the controller output to read- and write-head parameters.

    ``projections`` supplies one (W, b) linear layer per parameter per
    head (see :func:`cntm.model.param_spec`); each output passes through
    the activation that enforces its range.
    """
    heads = []
    for prefix, fields in (("read", READ_FIELDS), ("write", WRITE_FIELDS)):
        values = {}
        for field in fields:
            W, b = projections[f"{prefix}.{field}"]
            raw = ad.linear(W, h, b)
            kind = _ACTIVATION_FOR[field]
            values[field] = raw if kind is None else ad.activation(kind, raw)
        heads.append(HeadParams(**values))
    return heads[0], heads[1]


_ACTIVATION_FN = {
    "k": None,
    "beta": ad.relu,
    "g": ad.sigmoid,
    "s": ad.softmax,
    "gamma": ad.oneplus,
    "e": ad.sigmoid,
    "a": None,
}

_HEAD_FIELDS = tuple(f"read.{f}" for f in READ_FIELDS) + \
    tuple(f"write.{f}" for f in WRITE_FIELDS)


def stack_head_projections(projections, mem_cols: int, shift_width: int):
    """Row-stack the per-parameter projections into one matrix and bias.

    This is a pure-speed fusion: one matrix-vector product per step
    instead of twelve, with gradients still flowing to the individual
    projection tensors.  Must run inside the episode's record.
    """
    sizes = head_field_sizes(mem_cols, shift_width)
    W = ad.vstack([projections[name][0] for name in _HEAD_FIELDS])
    b = ad.concat([projections[name][1] for name in _HEAD_FIELDS])
    field_sizes = [sizes[name.split(".")[1]] for name in _HEAD_FIELDS]
    return W, b, field_sizes


def head_params_fused(h: Tensor, stacked) -> tuple[HeadParams, HeadParams]:
    """Same mapping as head_params_from_controller via the stacked matrix."""
    W, b, field_sizes = stacked
    raw = ad.split(ad.linear(W, h, b), field_sizes)
    values = {}
    for name, piece in zip(_HEAD_FIELDS, raw):
        field = name.split(".")[1]
        fn = _ACTIVATION_FN[field]
        values[name] = piece if fn is None else fn(piece)
    read = HeadParams(**{f: values[f"read.{f}"] for f in READ_FIELDS})
    write = HeadParams(**{f: values[f"write.{f}"] for f in WRITE_FIELDS})
    return read, write


def content_address(M: Tensor, k: Tensor, beta: Tensor, eps: float = 1e-8) -> Tensor:
    """Weighting over rows by key similarity, sharpened by the strength beta."""
    sims = ad.cosine_rows(M, k, eps)
    return ad.softmax(ad.mul(sims, beta))


def interpolate(w_c: Tensor, w_prev: Tensor, g: Tensor) -> Tensor:
    """Gate between the content weighting (g=1) and the previous one (g=0)."""
    return ad.lerp(w_c, w_prev, g)


def address(M: Tensor, w_prev: Tensor, params: HeadParams) -> Tensor:
    """Full addressing pipeline: content, interpolate, shift, sharpen."""
    w_c = content_address(M, params.k, params.beta)
    w_g = interpolate(w_c, w_prev, params.g)
    w_s = ad.circular_convolve(w_g, params.s)
    return ad.pow_normalize(w_s, params.gamma)


def read(M: Tensor, w_read: Tensor) -> Tensor:
    """Weighted sum of memory rows: M^T w."""
    return ad.tmatvec(M, w_read)


def write(M_prev: Tensor, w_write: Tensor, e: Tensor, a: Tensor) -> Tensor:
    """Erase-then-add update; rows with zero write weight are unchanged."""
    return ad.erase_add(M_prev, w_write, e, a)


def fresh_state(M0: Tensor, w_read: Tensor | None = None,
                w_write: Tensor | None = None) -> MemoryState:
    """Episode-start state: the (learned) initial matrix, the given (or
    uniform) head weightings, and a zero read vector."""
    n, m = M0.data.shape
    if w_read is None:
        w_read = Tensor(np.full(n, 1.0 / n))
    if w_write is None:
        w_write = Tensor(np.full(n, 1.0 / n))
    return MemoryState(M=M0, w_read=w_read, w_write=w_write,
                       r=Tensor(np.zeros(m)))


def step_memory(state: MemoryState, read_p: HeadParams, write_p: HeadParams) -> MemoryState:
    """Advance the memory one step: write first, then read the new matrix."""
    w_write = address(state.M, state.w_write, write_p)
    M2 = write(state.M, w_write, write_p.e, write_p.a)
    w_read = address(M2, state.w_read, read_p)
    r = read(M2, w_read)
    return MemoryState(M=M2, w_read=w_read, w_write=w_write, r=r)
