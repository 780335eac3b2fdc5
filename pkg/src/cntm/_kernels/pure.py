"""Reference numpy implementations of the hot numerical kernels.

Every function here has a drop-in twin in the compiled extension
``cntm._kernels._core``; the package selects one backend at import time.
Forward kernels return whatever intermediate values their backward twin
needs, so callers never recompute norms, gate activations, etc.

All arrays are 64-bit floats.  Vectors are 1-D, matrices 2-D, row-major.
"""

import numpy as np

__all__ = [
    "sigmoid", "sigmoid_bwd",
    "tanh", "tanh_bwd",
    "relu", "relu_bwd",
    "oneplus", "oneplus_bwd",
    "softmax", "softmax_bwd",
    "cosine_vec", "cosine_vec_bwd",
    "cosine_rows", "cosine_rows_bwd",
    "circ_conv", "circ_conv_bwd",
    "pow_norm", "pow_norm_bwd",
    "lstm_gates", "lstm_gates_bwd",
    "erase_add", "erase_add_bwd",
]


def sigmoid(x):
    # exp of a non-positive argument only, so no overflow on either tail
    z = np.exp(-np.abs(x))
    return np.where(x >= 0.0, 1.0 / (1.0 + z), z / (1.0 + z))


def sigmoid_bwd(g, y):
    return g * y * (1.0 - y)


def tanh(x):
    return np.tanh(x)


def tanh_bwd(g, y):
    return g * (1.0 - y * y)


def relu(x):
    return np.maximum(x, 0.0)


def relu_bwd(g, x):
    return np.where(x > 0.0, g, 0.0)


def oneplus(x):
    return 1.0 + np.logaddexp(0.0, x)


def oneplus_bwd(g, x):
    return g * sigmoid(x)


def softmax(x):
    e = np.exp(x - np.max(x))
    return e / np.sum(e)


def softmax_bwd(g, p):
    return (g - np.dot(g, p)) * p


def cosine_vec(u, v, eps):
    un = max(float(np.linalg.norm(u)), eps)
    vn = max(float(np.linalg.norm(v)), eps)
    c = float(np.dot(u, v)) / (un * vn)
    return c, un, vn


def cosine_vec_bwd(g, u, v, c, un, vn, eps):
    # when a norm is clipped to eps it no longer depends on its vector
    gu = v / (un * vn)
    if un > eps:
        gu = gu - (c / (un * un)) * u
    gv = u / (un * vn)
    if vn > eps:
        gv = gv - (c / (vn * vn)) * v
    return g * gu, g * gv


def cosine_rows(M, k, eps):
    """Cosine similarity between a query vector and every matrix row."""
    dots = M @ k
    rn = np.maximum(np.sqrt(np.einsum("ij,ij->i", M, M)), eps)
    kn = max(float(np.linalg.norm(k)), eps)
    sims = dots / (rn * kn)
    return sims, rn, kn


def cosine_rows_bwd(g, M, k, sims, rn, kn, eps):
    a = g / (rn * kn)
    gM = np.outer(a, k)
    mask = rn > eps
    coef = np.where(mask, g * sims / (rn * rn), 0.0)
    gM -= coef[:, None] * M
    gk = M.T @ a
    if kn > eps:
        gk = gk - (np.dot(g, sims) / (kn * kn)) * k
    return gM, gk


def circ_conv(w, s):
    """Circular convolution of w by a short shift distribution s.

    s is centered: entry j weights a rotation by (j - (len(s)-1)//2).
    """
    off = (len(s) - 1) // 2
    out = np.zeros_like(w)
    for j in range(len(s)):
        out += s[j] * np.roll(w, j - off)
    return out


def circ_conv_bwd(g, w, s):
    off = (len(s) - 1) // 2
    gw = np.zeros_like(w)
    gs = np.empty_like(s)
    for j in range(len(s)):
        gw += s[j] * np.roll(g, off - j)
        gs[j] = np.dot(g, np.roll(w, j - off))
    return gw, gs


def pow_norm(w, gamma):
    """Sharpen a nonnegative weighting: w**gamma renormalized to sum 1."""
    powed = np.power(w, gamma)
    total = float(np.sum(powed))
    return powed / total, powed, total


def pow_norm_bwd(g, w, gamma, out, powed, total):
    gp = (g - np.dot(g, out)) / total
    # 0**0 == 1, so the gamma == 1 case stays exact at w == 0
    gw = gp * gamma * np.power(w, gamma - 1.0)
    logw = np.where(w > 0.0, np.log(np.where(w > 0.0, w, 1.0)), 0.0)
    ggamma = float(np.dot(gp, powed * logw))
    return gw, ggamma


def lstm_gates(z, c_prev):
    """Gate nonlinearity and state update of one LSTM cell step.

    z holds the four pre-activation gate blocks (input, forget, candidate,
    output), each the width of the cell state.
    """
    d = len(c_prev)
    i = sigmoid(z[:d])
    f = sigmoid(z[d:2 * d])
    cand = tanh(z[2 * d:3 * d])
    o = sigmoid(z[3 * d:])
    c = f * c_prev + i * cand
    tc = np.tanh(c)
    h = o * tc
    return h, c, i, f, cand, o, tc


def lstm_gates_bwd(gh, gc, c_prev, i, f, cand, o, tc):
    do = gh * tc
    dc = gc + gh * o * (1.0 - tc * tc)
    dz = np.concatenate([
        dc * cand * i * (1.0 - i),
        dc * c_prev * f * (1.0 - f),
        dc * i * (1.0 - cand * cand),
        do * o * (1.0 - o),
    ])
    return dz, dc * f


def erase_add(M, w, e, a):
    """Weighted erase-then-add update of a memory matrix."""
    return M * (1.0 - np.outer(w, e)) + np.outer(w, a)


def erase_add_bwd(g, M, w, e, a):
    gM = g * (1.0 - np.outer(w, e))
    gMw = g * M
    gw = g @ a - gMw @ e
    ge = -(gMw.T @ w)
    ga = g.T @ w
    return gM, gw, ge, ga
