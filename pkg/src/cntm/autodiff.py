"""Dense float64 tensors with reverse-mode automatic differentiation.

The engine is deliberately small: it provides exactly the operations the
model's forward pass needs, records them on an explicit tape (a
:class:`ComputationRecord`), and replays hand-written backward rules in
reverse order.  Heavy elementwise math is delegated to the kernel backend
in :mod:`cntm._kernels`; matrix products go straight to numpy's BLAS.

Typical use::

    with record():
        loss = some_scalar_expression(...)
        backward(loss)
    # every requires_grad leaf now carries .grad

Outside of a ``record()`` block no tape exists and operations run
forward-only, which is what evaluation uses.
"""

from __future__ import annotations

import contextlib

import numpy as np

from cntm import _kernels as K


class DimensionError(ValueError):
    """Operand shapes incompatible with the requested operation."""


class NumericalDomainError(ValueError):
    """Input outside the mathematical domain of the operation."""


class Tensor:
    """A dense float64 array plus an optional gradient slot.

    Values are treated as immutable once the tensor has entered a
    recorded computation; only ``grad`` is mutated, and only by the
    backward pass of the record that produced it.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad

    @classmethod
    def _wrap(cls, data: np.ndarray, requires_grad: bool) -> "Tensor":
        t = object.__new__(cls)
        t.data = data
        t.grad = None
        t.requires_grad = requires_grad
        return t

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor({self.data!r}, requires_grad={self.requires_grad})"


class ComputationRecord:
    """Ordered log of executed operations and their backward rules.

    Operations append themselves in execution order, so the list is
    topologically sorted by construction; running the rules in reverse
    accumulates gradients additively into every ``requires_grad`` leaf.
    """

    __slots__ = ("_nodes",)

    def __init__(self):
        self._nodes = []

    def __len__(self):
        return len(self._nodes)

    def append(self, rule, outs) -> None:
        self._nodes.append((rule, outs))

    def backward(self, loss: Tensor) -> None:
        """Accumulate gradients of ``loss`` into every requires_grad leaf.

        Gradients of the record's own intermediate outputs are per-pass
        scratch and reset first, so repeated calls add leaf gradients
        rather than compounding through stale intermediates.
        """
        if loss.data.size != 1:
            raise ValueError(
                f"backward() needs a scalar loss, got shape {loss.data.shape}"
            )
        for _, outs in self._nodes:
            for o in outs:
                o.grad = None
        _acc(loss, np.ones_like(loss.data))
        for rule, _ in reversed(self._nodes):
            rule()


_ACTIVE: ComputationRecord | None = None


@contextlib.contextmanager
def record():
    """Open a fresh computation record and make it active."""
    global _ACTIVE
    prev = _ACTIVE
    rec = ComputationRecord()
    _ACTIVE = rec
    try:
        yield rec
    finally:
        _ACTIVE = prev


def active_record() -> ComputationRecord | None:
    return _ACTIVE


def backward(loss: Tensor) -> None:
    """Run the active record's backward rules from ``loss``.

    Repeated calls without zeroing gradients accumulate.
    """
    if _ACTIVE is None:
        raise ValueError("backward() requires an active computation record")
    _ACTIVE.backward(loss)


def _acc(t: Tensor, g) -> None:
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


try:
    from scipy.linalg.blas import dger as _dger
except ImportError:  # pragma: no cover - scipy is a soft dependency
    _dger = None


def _acc_outer(t: Tensor, g: np.ndarray, x: np.ndarray) -> None:
    """t.grad += outer(g, x), using a BLAS rank-1 update when available.

    The two paths multiply/add elementwise with no reductions, so they
    produce bit-identical results.
    """
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    if _dger is not None and t.grad.flags.c_contiguous:
        _dger(1.0, x, g, a=t.grad.T, overwrite_a=1)
    else:
        t.grad += g[:, None] * x


# ---------------------------------------------------------------------------
# products


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; also accepts a 1-D right operand (matrix @ vector)."""
    ad, bd = a.data, b.data
    if ad.ndim == 2 and bd.ndim in (1, 2):
        if ad.shape[1] != bd.shape[0]:
            raise DimensionError(f"matmul: inner dims differ, {ad.shape} @ {bd.shape}")
    else:
        raise DimensionError(f"matmul: unsupported ranks {ad.shape} @ {bd.shape}")
    out = Tensor._wrap(ad @ bd, a.requires_grad or b.requires_grad)
    rec = _ACTIVE
    if rec is not None and out.requires_grad:
        def rule():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                _acc(a, np.outer(g, bd) if bd.ndim == 1 else g @ bd.T)
            if b.requires_grad:
                _acc(b, ad.T @ g)
        rec.append(rule, (out,))
    return out


def linear(W: Tensor, x: Tensor, b: Tensor) -> Tensor:
    """Fused affine map W @ x + b for a 1-D x."""
    Wd, xd, bd = W.data, x.data, b.data
    out = Tensor._wrap(Wd @ xd + bd,
                       W.requires_grad or x.requires_grad or b.requires_grad)
    rec = _ACTIVE
    if rec is not None and out.requires_grad:
        def rule():
            g = out.grad
            if g is None:
                return
            if W.requires_grad:
                _acc_outer(W, g, xd)
            if x.requires_grad:
                _acc(x, Wd.T @ g)
            if b.requires_grad:
                _acc(b, g)
        rec.append(rule, (out,))
    return out


def linear2(W1: Tensor, x1: Tensor, W2: Tensor, x2: Tensor, b: Tensor) -> Tensor:
    """Fused two-input affine map W1 @ x1 + W2 @ x2 + b."""
    out_d = W1.data @ x1.data + W2.data @ x2.data + b.data
    needs = (W1.requires_grad or x1.requires_grad or W2.requires_grad
             or x2.requires_grad or b.requires_grad)
    out = Tensor._wrap(out_d, needs)
    rec = _ACTIVE
    if rec is not None and needs:
        W1d, x1d, W2d, x2d = W1.data, x1.data, W2.data, x2.data
        def rule():
            g = out.grad
            if g is None:
                return
            if W1.requires_grad:
                _acc_outer(W1, g, x1d)
            if x1.requires_grad:
                _acc(x1, W1d.T @ g)
            if W2.requires_grad:
                _acc_outer(W2, g, x2d)
            if x2.requires_grad:
                _acc(x2, W2d.T @ g)
            if b.requires_grad:
                _acc(b, g)
        rec.append(rule, (out,))
    return out


def tmatvec(M: Tensor, w: Tensor) -> Tensor:
    """M.T @ w without materializing the transpose."""
    Md, wd = M.data, w.data
    if Md.ndim != 2 or wd.ndim != 1 or Md.shape[0] != wd.shape[0]:
        raise DimensionError(f"tmatvec: shapes {Md.shape} and {wd.shape}")
    out = Tensor._wrap(Md.T @ wd, M.requires_grad or w.requires_grad)
    rec = _ACTIVE
    if rec is not None and out.requires_grad:
        def rule():
            g = out.grad
            if g is None:
                return
            if M.requires_grad:
                _acc_outer(M, wd, g)
            if w.requires_grad:
                _acc(w, Md @ g)
        rec.append(rule, (out,))
    return out


def outer(u: Tensor, v: Tensor) -> Tensor:
    ud, vd = u.data, v.data
    out = Tensor._wrap(np.outer(ud, vd), u.requires_grad or v.requires_grad)
    rec = _ACTIVE
    if rec is not None and out.requires_grad:
        def rule():
            g = out.grad
            if g is None:
                return
            if u.requires_grad:
                _acc(u, g @ vd)
            if v.requires_grad:
                _acc(v, g.T @ ud)
        rec.append(rule, (out,))
    return out


# ---------------------------------------------------------------------------
# pointwise arithmetic

def _check_binary(a: Tensor, b: Tensor) -> None:
    # permitted broadcasts: equal shapes, or one operand of size 1
    if a.data.shape != b.data.shape and a.data.size != 1 and b.data.size != 1:
        raise DimensionError(
            f"elementwise: shapes {a.data.shape} and {b.data.shape} "
            "are neither equal nor scalar-with-tensor"
        )


def _acc_reduced(t: Tensor, g) -> None:
    # reduce the incoming gradient onto a (possibly scalar) operand
    if t.data.shape == np.shape(g):
        _acc(t, g)
    else:
        _acc(t, np.asarray(np.sum(g)).reshape(t.data.shape))


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_binary(a, b)
    out = Tensor._wrap(a.data + b.data, a.requires_grad or b.requires_grad)
    rec = _ACTIVE
    if rec is not None and out.requires_grad:
        def rule():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                _acc_reduced(a, g)
            if b.requires_grad:
                _acc_reduced(b, g)
        rec.append(rule, (out,))
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_binary(a, b)
    out = Tensor._wrap(a.data - b.data, a.requires_grad or b.requires_grad)
    rec = _ACTIVE
    if rec is not None and out.requires_grad:
        def rule():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                _acc_reduced(a, g)
            if b.requires_grad:
                _acc_reduced(b, -g)
        rec.append(rule, (out,))
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_binary(a, b)
    ad, bd = a.data, b.data
    out = Tensor._wrap(ad * bd, a.requires_grad or b.requires_grad)
    rec = _ACTIVE
    if rec is not None and out.requires_grad:
        def rule():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                _acc_reduced(a, g * bd)
            if b.requires_grad:
                _acc_reduced(b, g * ad)
        rec.append(rule, (out,))
    return out


def one_minus(x: Tensor) -> Tensor:
    out = Tensor._wrap(1.0 - x.data, x.requires_grad)
    rec = _ACTIVE
    if rec is not None and out.requires_grad:
        def rule():
            g = out.grad
            if g is None:
                return
            _acc(x, -g)
        rec.append(rule, (out,))
    return out


_ELEMENTWISE = None


def elementwise(op_kind: str, a: Tensor, b: Tensor | None = None) -> Tensor:
    """Dispatch on op_kind in {add, sub, mul, one_minus}."""
    global _ELEMENTWISE
    if _ELEMENTWISE is None:
        _ELEMENTWISE = {"add": add, "sub": sub, "mul": mul, "one_minus": one_minus}
    try:
        op = _ELEMENTWISE[op_kind]
    except KeyError:
        raise ValueError(
            f"unknown elementwise op {op_kind!r}; expected one of "
            f"{sorted(_ELEMENTWISE)}"
        ) from None
    if op_kind == "one_minus":
        if b is not None:
            raise ValueError("one_minus takes a single operand")
        return op(a)
    if b is None:
        raise ValueError(f"{op_kind} needs two operands")
    return op(a, b)


def lerp(a: Tensor, b: Tensor, gate: Tensor) -> Tensor:
    """Gated blend gate * a + (1 - gate) * b with a scalar gate."""
    gd = gate.data
    if gd.size != 1:
        raise DimensionError(f"lerp gate must be scalar, got shape {gd.shape}")
    gv = gd.item()
    ad_, bd = a.data, b.data
    needs = a.requires_grad or b.requires_grad or gate.requires_grad
    out = Tensor._wrap(gv * ad_ + (1.0 - gv) * bd, needs)
    rec = _ACTIVE
    if rec is not None and needs:
        def rule():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                _acc(a, g * gv)
            if b.requires_grad:
                _acc(b, g * (1.0 - gv))
            if gate.requires_grad:
                _acc_reduced(gate, np.dot(g, ad_ - bd))
        rec.append(rule, (out,))
    return out


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a python constant (no gradient for the constant)."""
    out = Tensor._wrap(x.data * c, x.requires_grad)
    rec = _ACTIVE
    if rec is not None and out.requires_grad:
        def rule():
            g = out.grad
            if g is None:
                return
            _acc(x, g * c)
        rec.append(rule, (out,))
    return out


# ---------------------------------------------------------------------------
# activations


def sigmoid(x: Tensor) -> Tensor:
    y = K.sigmoid(x.data)
    out = Tensor._wrap(y, x.requires_grad)
    rec = _ACTIVE
    if rec is not None and out.requires_grad:
        def rule():
            g = out.grad
            if g is None:
                return
            _acc(x, K.sigmoid_bwd(g, y))
        rec.append(rule, (out,))
    return out


def tanh(x: Tensor) -> Tensor:
    y = K.tanh(x.data)
    out = Tensor._wrap(y, x.requires_grad)
    rec = _ACTIVE
    if rec is not None and out.requires_grad:
        def rule():
            g = out.grad
            if g is None:
                return
            _acc(x, K.tanh_bwd(g, y))
        rec.append(rule, (out,))
    return out


def relu(x: Tensor) -> Tensor:
    xd = x.data
    out = Tensor._wrap(K.relu(xd), x.requires_grad)
    rec = _ACTIVE
    if rec is not None and out.requires_grad:
        def rule():
            g = out.grad
            if g is None:
                return
            _acc(x, K.relu_bwd(g, xd))
        rec.append(rule, (out,))
    return out


def oneplus(x: Tensor) -> Tensor:
    """1 + log(1 + exp(x)); smooth, bounded below by 1."""
    xd = x.data
    out = Tensor._wrap(K.oneplus(xd), x.requires_grad)
    rec = _ACTIVE
    if rec is not None and out.requires_grad:
        def rule():
            g = out.grad
            if g is None:
                return
            _acc(x, K.oneplus_bwd(g, xd))
        rec.append(rule, (out,))
    return out


def softmax(x: Tensor) -> Tensor:
    """Normalized exponential over a 1-D tensor, max-subtracted for stability."""
    if x.data.ndim != 1:
        raise DimensionError(f"softmax expects a 1-D tensor, got {x.data.shape}")
    p = K.softmax(x.data)
    out = Tensor._wrap(p, x.requires_grad)
    rec = _ACTIVE
    if rec is not None and out.requires_grad:
        def rule():
            g = out.grad
            if g is None:
                return
            _acc(x, K.softmax_bwd(g, p))
        rec.append(rule, (out,))
    return out


_ACTIVATIONS = None


def activation(kind: str, x: Tensor) -> Tensor:
    """Dispatch on kind in {sigmoid, tanh, relu, softmax, oneplus}."""
    global _ACTIVATIONS
    if _ACTIVATIONS is None:
        _ACTIVATIONS = {
            "sigmoid": sigmoid,
            "tanh": tanh,
            "relu": relu,
            "softmax": softmax,
            "oneplus": oneplus,
        }
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(
            f"unknown activation {kind!r}; expected one of {sorted(_ACTIVATIONS)}"
        ) from None
    return fn(x)


# ---------------------------------------------------------------------------
# similarity, shifting, sharpening


def cosine_similarity(u: Tensor, v: Tensor, eps: float = 1e-8) -> Tensor:
    """Cosine of the angle between two vectors; eps guards zero vectors."""
    ud, vd = u.data, v.data
    if ud.shape != vd.shape or ud.ndim != 1:
        raise DimensionError(f"cosine_similarity: shapes {ud.shape} and {vd.shape}")
    c, un, vn = K.cosine_vec(ud, vd, eps)
    out = Tensor._wrap(np.asarray(c), u.requires_grad or v.requires_grad)
    rec = _ACTIVE
    if rec is not None and out.requires_grad:
        def rule():
            g = out.grad
            if g is None:
                return
            gu, gv = K.cosine_vec_bwd(float(g), ud, vd, c, un, vn, eps)
            if u.requires_grad:
                _acc(u, gu)
            if v.requires_grad:
                _acc(v, gv)
        rec.append(rule, (out,))
    return out


def cosine_rows(M: Tensor, k: Tensor, eps: float = 1e-8) -> Tensor:
    """Cosine similarity between k and every row of M, as one vector."""
    Md, kd = M.data, k.data
    if Md.ndim != 2 or kd.ndim != 1 or Md.shape[1] != kd.shape[0]:
        raise DimensionError(f"cosine_rows: shapes {Md.shape} and {kd.shape}")
    sims, rn, kn = K.cosine_rows(Md, kd, eps)
    out = Tensor._wrap(sims, M.requires_grad or k.requires_grad)
    rec = _ACTIVE
    if rec is not None and out.requires_grad:
        def rule():
            g = out.grad
            if g is None:
                return
            gM, gk = K.cosine_rows_bwd(g, Md, kd, sims, rn, kn, eps)
            if M.requires_grad:
                _acc(M, gM)
            if k.requires_grad:
                _acc(k, gk)
        rec.append(rule, (out,))
    return out


def circular_convolve(w: Tensor, s: Tensor) -> Tensor:
    """Rotate w by the distribution s over centered shift offsets."""
    wd, sd = w.data, s.data
    if sd.ndim != 1 or wd.ndim != 1:
        raise DimensionError(f"circular_convolve: shapes {wd.shape} and {sd.shape}")
    if len(sd) % 2 == 0 or len(sd) > len(wd):
        raise DimensionError(
            f"circular_convolve: shift width {len(sd)} must be odd and "
            f"no wider than the weighting ({len(wd)})"
        )
    out = Tensor._wrap(K.circ_conv(wd, sd), w.requires_grad or s.requires_grad)
    rec = _ACTIVE
    if rec is not None and out.requires_grad:
        def rule():
            g = out.grad
            if g is None:
                return
            gw, gs = K.circ_conv_bwd(g, wd, sd)
            if w.requires_grad:
                _acc(w, gw)
            if s.requires_grad:
                _acc(s, gs)
        rec.append(rule, (out,))
    return out


def pow_normalize(w: Tensor, gamma: Tensor) -> Tensor:
    """Raise nonnegative weights to a scalar power and renormalize to sum 1."""
    wd = w.data
    gd = gamma.data.item()
    if not np.any(wd > 0.0):
        raise NumericalDomainError("pow_normalize: weighting is all zero")
    out_d, powed, total = K.pow_norm(wd, gd)
    out = Tensor._wrap(out_d, w.requires_grad or gamma.requires_grad)
    rec = _ACTIVE
    if rec is not None and out.requires_grad:
        def rule():
            g = out.grad
            if g is None:
                return
            gw, ggamma = K.pow_norm_bwd(g, wd, gd, out_d, powed, total)
            if w.requires_grad:
                _acc(w, gw)
            if gamma.requires_grad:
                _acc(gamma, np.asarray(ggamma).reshape(gamma.data.shape))
        rec.append(rule, (out,))
    return out


# ---------------------------------------------------------------------------
# structure


def concat(parts: list[Tensor]) -> Tensor:
    """Concatenate 1-D tensors."""
    datas = [p.data for p in parts]
    needs = any(p.requires_grad for p in parts)
    out = Tensor._wrap(np.concatenate(datas), needs)
    rec = _ACTIVE
    if rec is not None and needs:
        sizes = [d.shape[0] for d in datas]
        def rule():
            g = out.grad
            if g is None:
                return
            o = 0
            for p, n in zip(parts, sizes):
                if p.requires_grad:
                    _acc(p, g[o:o + n])
                o += n
        rec.append(rule, (out,))
    return out


def split(x: Tensor, sizes: list[int]) -> tuple[Tensor, ...]:
    """Split a 1-D tensor into consecutive pieces of the given sizes."""
    if sum(sizes) != x.data.shape[0]:
        raise DimensionError(
            f"split: sizes {sizes} do not cover length {x.data.shape[0]}"
        )
    outs = []
    o = 0
    for n in sizes:
        outs.append(Tensor._wrap(x.data[o:o + n], x.requires_grad))
        o += n
    rec = _ACTIVE
    if rec is not None and x.requires_grad:
        def rule():
            pieces = [t.grad if t.grad is not None else np.zeros(n)
                      for t, n in zip(outs, sizes)]
            _acc(x, np.concatenate(pieces))
        rec.append(rule, tuple(outs))
    return tuple(outs)


def vstack(rows: list[Tensor]) -> Tensor:
    """Stack 2-D tensors with equal column counts along rows."""
    datas = [r.data for r in rows]
    needs = any(r.requires_grad for r in rows)
    out = Tensor._wrap(np.concatenate(datas, axis=0), needs)
    rec = _ACTIVE
    if rec is not None and needs:
        counts = [d.shape[0] for d in datas]
        def rule():
            g = out.grad
            if g is None:
                return
            o = 0
            for r, n in zip(rows, counts):
                if r.requires_grad:
                    _acc(r, g[o:o + n])
                o += n
        rec.append(rule, (out,))
    return out


# ---------------------------------------------------------------------------
# reductions and scalar plumbing


def sum_all(x: Tensor) -> Tensor:
    out = Tensor._wrap(np.asarray(np.sum(x.data)), x.requires_grad)
    rec = _ACTIVE
    if rec is not None and out.requires_grad:
        def rule():
            g = out.grad
            if g is None:
                return
            _acc(x, np.full_like(x.data, float(g)))
        rec.append(rule, (out,))
    return out


def log(x: Tensor) -> Tensor:
    xd = x.data
    out = Tensor._wrap(np.log(xd), x.requires_grad)
    rec = _ACTIVE
    if rec is not None and out.requires_grad:
        def rule():
            g = out.grad
            if g is None:
                return
            _acc(x, g / xd)
        rec.append(rule, (out,))
    return out


def pick(x: Tensor, index: int) -> Tensor:
    """Select one entry of a 1-D tensor as a scalar."""
    out = Tensor._wrap(np.asarray(x.data[index]), x.requires_grad)
    rec = _ACTIVE
    if rec is not None and out.requires_grad:
        def rule():
            g = out.grad
            if g is None:
                return
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            x.grad[index] += float(g)
        rec.append(rule, (out,))
    return out


def nll(p: Tensor, index: int) -> Tensor:
    """Negative log of one entry of a probability vector."""
    pi = float(p.data[index])
    out = Tensor._wrap(np.asarray(-np.log(pi)), p.requires_grad)
    rec = _ACTIVE
    if rec is not None and out.requires_grad:
        def rule():
            g = out.grad
            if g is None:
                return
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
            p.grad[index] -= float(g) / pi
        rec.append(rule, (out,))
    return out


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, W: Tensor, b: Tensor):
    """One LSTM step: gates from W @ [x; h] + b, then the state update.

    Returns (new_hidden, new_cell).
    """
    xd, hd, cd, Wd, bd = x.data, h.data, c.data, W.data, b.data
    xh = np.concatenate([xd, hd])
    z = Wd @ xh + bd
    h2d, c2d, i, f, cand, o, tc = K.lstm_gates(z, cd)
    needs = (x.requires_grad or h.requires_grad or c.requires_grad
             or W.requires_grad or b.requires_grad)
    h2 = Tensor._wrap(h2d, needs)
    c2 = Tensor._wrap(c2d, needs)
    rec = _ACTIVE
    if rec is not None and needs:
        nx = xd.shape[0]
        def rule():
            gh = h2.grad
            gc = c2.grad
            if gh is None and gc is None:
                return
            if gh is None:
                gh = np.zeros_like(h2d)
            if gc is None:
                gc = np.zeros_like(c2d)
            dz, dcp = K.lstm_gates_bwd(gh, gc, cd, i, f, cand, o, tc)
            if W.requires_grad:
                _acc_outer(W, dz, xh)
            if b.requires_grad:
                _acc(b, dz)
            if c.requires_grad:
                _acc(c, dcp)
            if x.requires_grad or h.requires_grad:
                dxh = Wd.T @ dz
                if x.requires_grad:
                    _acc(x, dxh[:nx])
                if h.requires_grad:
                    _acc(h, dxh[nx:])
        rec.append(rule, (h2, c2))
    return h2, c2


def erase_add(M: Tensor, w: Tensor, e: Tensor, a: Tensor) -> Tensor:
    """Memory update M * (1 - w e^T) + w a^T in one fused step."""
    Md, wd, ed, ad = M.data, w.data, e.data, a.data
    needs = (M.requires_grad or w.requires_grad or e.requires_grad
             or a.requires_grad)
    out = Tensor._wrap(K.erase_add(Md, wd, ed, ad), needs)
    rec = _ACTIVE
    if rec is not None and needs:
        def rule():
            g = out.grad
            if g is None:
                return
            gM, gw, ge, ga = K.erase_add_bwd(g, Md, wd, ed, ad)
            if M.requires_grad:
                _acc(M, gM)
            if w.requires_grad:
                _acc(w, gw)
            if e.requires_grad:
                _acc(e, ge)
            if a.requires_grad:
                _acc(a, ga)
        rec.append(rule, (out,))
    return out
