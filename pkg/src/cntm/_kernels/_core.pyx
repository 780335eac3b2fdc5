# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``cntm._kernels.pure``.

Same names, same signatures, same cached intermediates; see the pure
module for the contracts.  These versions fuse the elementwise loops that
numpy would otherwise run one temporary at a time.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs, log, log1p, pow as cpow, sqrt, tanh as ctanh

cnp.import_array()


cdef inline double _sig(double v) noexcept nogil:
    cdef double z
    if v >= 0.0:
        z = exp(-v)
        return 1.0 / (1.0 + z)
    z = exp(v)
    return z / (1.0 + z)


def sigmoid(x):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty_like(arr)
    cdef double[::1] xv = arr.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    for i in range(n):
        ov[i] = _sig(xv[i])
    return out


def sigmoid_bwd(g, y):
    ga = np.ascontiguousarray(g, dtype=np.float64)
    ya = np.ascontiguousarray(y, dtype=np.float64)
    out = np.empty_like(ya)
    cdef double[::1] gv = ga.ravel()
    cdef double[::1] yv = ya.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = yv.shape[0]
    for i in range(n):
        ov[i] = gv[i] * yv[i] * (1.0 - yv[i])
    return out


def tanh(x):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty_like(arr)
    cdef double[::1] xv = arr.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    for i in range(n):
        ov[i] = ctanh(xv[i])
    return out


def tanh_bwd(g, y):
    ga = np.ascontiguousarray(g, dtype=np.float64)
    ya = np.ascontiguousarray(y, dtype=np.float64)
    out = np.empty_like(ya)
    cdef double[::1] gv = ga.ravel()
    cdef double[::1] yv = ya.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = yv.shape[0]
    for i in range(n):
        ov[i] = gv[i] * (1.0 - yv[i] * yv[i])
    return out


def relu(x):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty_like(arr)
    cdef double[::1] xv = arr.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    for i in range(n):
        ov[i] = xv[i] if xv[i] > 0.0 else 0.0
    return out


def relu_bwd(g, x):
    ga = np.ascontiguousarray(g, dtype=np.float64)
    xa = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty_like(xa)
    cdef double[::1] gv = ga.ravel()
    cdef double[::1] xv = xa.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    for i in range(n):
        ov[i] = gv[i] if xv[i] > 0.0 else 0.0
    return out


cdef inline double _softplus(double v) noexcept nogil:
    if v > 0.0:
        return v + log1p(exp(-v))
    return log1p(exp(v))


def oneplus(x):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty_like(arr)
    cdef double[::1] xv = arr.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    for i in range(n):
        ov[i] = 1.0 + _softplus(xv[i])
    return out


def oneplus_bwd(g, x):
    ga = np.ascontiguousarray(g, dtype=np.float64)
    xa = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty_like(xa)
    cdef double[::1] gv = ga.ravel()
    cdef double[::1] xv = xa.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    for i in range(n):
        ov[i] = gv[i] * _sig(xv[i])
    return out


def softmax(x):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty_like(arr)
    cdef double[::1] xv = arr
    cdef double[::1] ov = out
    cdef Py_ssize_t i, n = xv.shape[0]
    cdef double m = xv[0]
    cdef double total = 0.0
    for i in range(1, n):
        if xv[i] > m:
            m = xv[i]
    for i in range(n):
        ov[i] = exp(xv[i] - m)
        total += ov[i]
    for i in range(n):
        ov[i] /= total
    return out


def softmax_bwd(g, p):
    ga = np.ascontiguousarray(g, dtype=np.float64)
    pa = np.ascontiguousarray(p, dtype=np.float64)
    out = np.empty_like(pa)
    cdef double[::1] gv = ga
    cdef double[::1] pv = pa
    cdef double[::1] ov = out
    cdef Py_ssize_t i, n = pv.shape[0]
    cdef double dot = 0.0
    for i in range(n):
        dot += gv[i] * pv[i]
    for i in range(n):
        ov[i] = (gv[i] - dot) * pv[i]
    return out


def cosine_vec(u, v, double eps):
    ua = np.ascontiguousarray(u, dtype=np.float64)
    va = np.ascontiguousarray(v, dtype=np.float64)
    cdef double[::1] uv = ua
    cdef double[::1] vv = va
    cdef Py_ssize_t i, n = uv.shape[0]
    cdef double un = 0.0, vn = 0.0, d = 0.0
    for i in range(n):
        un += uv[i] * uv[i]
        vn += vv[i] * vv[i]
        d += uv[i] * vv[i]
    un = sqrt(un)
    vn = sqrt(vn)
    if un < eps:
        un = eps
    if vn < eps:
        vn = eps
    return d / (un * vn), un, vn


def cosine_vec_bwd(double g, u, v, double c, double un, double vn, double eps):
    ua = np.ascontiguousarray(u, dtype=np.float64)
    va = np.ascontiguousarray(v, dtype=np.float64)
    gu = np.empty_like(ua)
    gv = np.empty_like(va)
    cdef double[::1] uv = ua
    cdef double[::1] vv = va
    cdef double[::1] guv = gu
    cdef double[::1] gvv = gv
    cdef Py_ssize_t i, n = uv.shape[0]
    cdef double inv = 1.0 / (un * vn)
    cdef double cu = c / (un * un) if un > eps else 0.0
    cdef double cv = c / (vn * vn) if vn > eps else 0.0
    for i in range(n):
        guv[i] = g * (vv[i] * inv - cu * uv[i])
        gvv[i] = g * (uv[i] * inv - cv * vv[i])
    return gu, gv


def cosine_rows(M, k, double eps):
    Ma = np.ascontiguousarray(M, dtype=np.float64)
    ka = np.ascontiguousarray(k, dtype=np.float64)
    cdef double[:, ::1] Mv = Ma
    cdef double[::1] kv = ka
    cdef Py_ssize_t i, j, n = Mv.shape[0], m = Mv.shape[1]
    sims = np.empty(n, dtype=np.float64)
    rn = np.empty(n, dtype=np.float64)
    cdef double[::1] sv = sims
    cdef double[::1] rv = rn
    cdef double kn = 0.0, d, r
    for j in range(m):
        kn += kv[j] * kv[j]
    kn = sqrt(kn)
    if kn < eps:
        kn = eps
    for i in range(n):
        d = 0.0
        r = 0.0
        for j in range(m):
            d += Mv[i, j] * kv[j]
            r += Mv[i, j] * Mv[i, j]
        r = sqrt(r)
        if r < eps:
            r = eps
        rv[i] = r
        sv[i] = d / (r * kn)
    return sims, rn, kn


def cosine_rows_bwd(g, M, k, sims, rn, double kn, double eps):
    ga = np.ascontiguousarray(g, dtype=np.float64)
    Ma = np.ascontiguousarray(M, dtype=np.float64)
    ka = np.ascontiguousarray(k, dtype=np.float64)
    sa = np.ascontiguousarray(sims, dtype=np.float64)
    ra = np.ascontiguousarray(rn, dtype=np.float64)
    cdef double[::1] gv = ga
    cdef double[:, ::1] Mv = Ma
    cdef double[::1] kv = ka
    cdef double[::1] sv = sa
    cdef double[::1] rv = ra
    cdef Py_ssize_t i, j, n = Mv.shape[0], m = Mv.shape[1]
    gM = np.empty((n, m), dtype=np.float64)
    gk = np.zeros(m, dtype=np.float64)
    cdef double[:, ::1] gMv = gM
    cdef double[::1] gkv = gk
    cdef double a, coef, gs = 0.0
    for i in range(n):
        a = gv[i] / (rv[i] * kn)
        coef = gv[i] * sv[i] / (rv[i] * rv[i]) if rv[i] > eps else 0.0
        for j in range(m):
            gMv[i, j] = a * kv[j] - coef * Mv[i, j]
            gkv[j] += a * Mv[i, j]
        gs += gv[i] * sv[i]
    if kn > eps:
        coef = gs / (kn * kn)
        for j in range(m):
            gkv[j] -= coef * kv[j]
    return gM, gk


def circ_conv(w, s):
    wa = np.ascontiguousarray(w, dtype=np.float64)
    sa = np.ascontiguousarray(s, dtype=np.float64)
    cdef double[::1] wv = wa
    cdef double[::1] sv = sa
    cdef Py_ssize_t i, j, n = wv.shape[0], k = sv.shape[0]
    cdef Py_ssize_t off = (k - 1) // 2
    out = np.zeros(n, dtype=np.float64)
    cdef double[::1] ov = out
    cdef Py_ssize_t src
    for j in range(k):
        for i in range(n):
            src = (i - (j - off)) % n
            if src < 0:
                src += n
            ov[i] += sv[j] * wv[src]
    return out


def circ_conv_bwd(g, w, s):
    ga = np.ascontiguousarray(g, dtype=np.float64)
    wa = np.ascontiguousarray(w, dtype=np.float64)
    sa = np.ascontiguousarray(s, dtype=np.float64)
    cdef double[::1] gv = ga
    cdef double[::1] wv = wa
    cdef double[::1] sv = sa
    cdef Py_ssize_t i, j, n = wv.shape[0], k = sv.shape[0]
    cdef Py_ssize_t off = (k - 1) // 2
    gw = np.zeros(n, dtype=np.float64)
    gs = np.empty(k, dtype=np.float64)
    cdef double[::1] gwv = gw
    cdef double[::1] gsv = gs
    cdef Py_ssize_t src
    cdef double acc
    for j in range(k):
        acc = 0.0
        for i in range(n):
            src = (i - (j - off)) % n
            if src < 0:
                src += n
            gwv[src] += sv[j] * gv[i]
            acc += gv[i] * wv[src]
        gsv[j] = acc
    return gw, gs


def pow_norm(w, double gamma):
    wa = np.ascontiguousarray(w, dtype=np.float64)
    cdef double[::1] wv = wa
    cdef Py_ssize_t i, n = wv.shape[0]
    powed = np.empty(n, dtype=np.float64)
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] pv = powed
    cdef double[::1] ov = out
    cdef double total = 0.0
    for i in range(n):
        pv[i] = cpow(wv[i], gamma)
        total += pv[i]
    for i in range(n):
        ov[i] = pv[i] / total
    return out, powed, total


def pow_norm_bwd(g, w, double gamma, out, powed, double total):
    ga = np.ascontiguousarray(g, dtype=np.float64)
    wa = np.ascontiguousarray(w, dtype=np.float64)
    oa = np.ascontiguousarray(out, dtype=np.float64)
    pa = np.ascontiguousarray(powed, dtype=np.float64)
    cdef double[::1] gv = ga
    cdef double[::1] wv = wa
    cdef double[::1] ov = oa
    cdef double[::1] pv = pa
    cdef Py_ssize_t i, n = wv.shape[0]
    gw = np.empty(n, dtype=np.float64)
    cdef double[::1] gwv = gw
    cdef double dot = 0.0, gp, ggamma = 0.0
    for i in range(n):
        dot += gv[i] * ov[i]
    for i in range(n):
        gp = (gv[i] - dot) / total
        gwv[i] = gp * gamma * cpow(wv[i], gamma - 1.0)
        if wv[i] > 0.0:
            ggamma += gp * pv[i] * log(wv[i])
    return gw, ggamma


def lstm_gates(z, c_prev):
    za = np.ascontiguousarray(z, dtype=np.float64)
    ca = np.ascontiguousarray(c_prev, dtype=np.float64)
    cdef double[::1] zv = za
    cdef double[::1] cv = ca
    cdef Py_ssize_t t, d = cv.shape[0]
    h = np.empty(d, dtype=np.float64)
    c = np.empty(d, dtype=np.float64)
    i = np.empty(d, dtype=np.float64)
    f = np.empty(d, dtype=np.float64)
    cand = np.empty(d, dtype=np.float64)
    o = np.empty(d, dtype=np.float64)
    tc = np.empty(d, dtype=np.float64)
    cdef double[::1] hv = h, civ = c, iv = i, fv = f, gv = cand, ov = o, tv = tc
    for t in range(d):
        iv[t] = _sig(zv[t])
        fv[t] = _sig(zv[d + t])
        gv[t] = ctanh(zv[2 * d + t])
        ov[t] = _sig(zv[3 * d + t])
        civ[t] = fv[t] * cv[t] + iv[t] * gv[t]
        tv[t] = ctanh(civ[t])
        hv[t] = ov[t] * tv[t]
    return h, c, i, f, cand, o, tc


def lstm_gates_bwd(gh, gc, c_prev, i, f, cand, o, tc):
    gha = np.ascontiguousarray(gh, dtype=np.float64)
    gca = np.ascontiguousarray(gc, dtype=np.float64)
    ca = np.ascontiguousarray(c_prev, dtype=np.float64)
    ia = np.ascontiguousarray(i, dtype=np.float64)
    fa = np.ascontiguousarray(f, dtype=np.float64)
    ga = np.ascontiguousarray(cand, dtype=np.float64)
    oa = np.ascontiguousarray(o, dtype=np.float64)
    ta = np.ascontiguousarray(tc, dtype=np.float64)
    cdef double[::1] ghv = gha, gcv = gca, cv = ca
    cdef double[::1] iv = ia, fv = fa, gv = ga, ov = oa, tv = ta
    cdef Py_ssize_t t, d = cv.shape[0]
    dz = np.empty(4 * d, dtype=np.float64)
    dcp = np.empty(d, dtype=np.float64)
    cdef double[::1] dzv = dz
    cdef double[::1] dcv = dcp
    cdef double dc, do
    for t in range(d):
        do = ghv[t] * tv[t]
        dc = gcv[t] + ghv[t] * ov[t] * (1.0 - tv[t] * tv[t])
        dzv[t] = dc * gv[t] * iv[t] * (1.0 - iv[t])
        dzv[d + t] = dc * cv[t] * fv[t] * (1.0 - fv[t])
        dzv[2 * d + t] = dc * iv[t] * (1.0 - gv[t] * gv[t])
        dzv[3 * d + t] = do * ov[t] * (1.0 - ov[t])
        dcv[t] = dc * fv[t]
    return dz, dcp


def erase_add(M, w, e, a):
    Ma = np.ascontiguousarray(M, dtype=np.float64)
    wa = np.ascontiguousarray(w, dtype=np.float64)
    ea = np.ascontiguousarray(e, dtype=np.float64)
    aa = np.ascontiguousarray(a, dtype=np.float64)
    cdef double[:, ::1] Mv = Ma
    cdef double[::1] wv = wa, ev = ea, av = aa
    cdef Py_ssize_t i, j, n = Mv.shape[0], m = Mv.shape[1]
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] ov = out
    for i in range(n):
        for j in range(m):
            ov[i, j] = Mv[i, j] * (1.0 - wv[i] * ev[j]) + wv[i] * av[j]
    return out


def erase_add_bwd(g, M, w, e, a):
    ga = np.ascontiguousarray(g, dtype=np.float64)
    Ma = np.ascontiguousarray(M, dtype=np.float64)
    wa = np.ascontiguousarray(w, dtype=np.float64)
    ea = np.ascontiguousarray(e, dtype=np.float64)
    aa = np.ascontiguousarray(a, dtype=np.float64)
    cdef double[:, ::1] gv = ga, Mv = Ma
    cdef double[::1] wv = wa, ev = ea, av = aa
    cdef Py_ssize_t i, j, n = Mv.shape[0], m = Mv.shape[1]
    gM = np.empty((n, m), dtype=np.float64)
    gw = np.zeros(n, dtype=np.float64)
    ge = np.zeros(m, dtype=np.float64)
    gacc = np.zeros(m, dtype=np.float64)
    cdef double[:, ::1] gMv = gM
    cdef double[::1] gwv = gw, gev = ge, gav = gacc
    cdef double gm
    for i in range(n):
        for j in range(m):
            gm = gv[i, j] * Mv[i, j]
            gMv[i, j] = gv[i, j] * (1.0 - wv[i] * ev[j])
            gwv[i] += gv[i, j] * av[j] - gm * ev[j]
            gev[j] -= gm * wv[i]
            gav[j] += gv[i, j] * wv[i]
    return gM, gw, ge, gacc
