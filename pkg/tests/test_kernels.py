"""Backend parity: the compiled kernels must match the numpy reference."""

import numpy as np
import pytest

from cntm._kernels import pure

core = pytest.importorskip(
    "cntm._kernels._core", reason="compiled kernel extension not built")

RTOL, ATOL = 1e-12, 1e-14


def close(a, b):
    return np.allclose(a, b, rtol=RTOL, atol=ATOL)


@pytest.fixture
def rng():
    return np.random.default_rng(7)


@pytest.mark.parametrize("name", ["sigmoid", "tanh", "relu", "oneplus"])
def test_pointwise_forward_and_backward(name, rng):
    x = rng.uniform(-6, 6, 64)
    g = rng.uniform(-1, 1, 64)
    yp = getattr(pure, name)(x)
    yc = getattr(core, name)(x)
    assert close(yp, yc)
    ref = yp if name in ("sigmoid", "tanh") else x
    assert close(getattr(pure, name + "_bwd")(g, ref),
                 getattr(core, name + "_bwd")(g, ref))


def test_softmax(rng):
    x = rng.uniform(-30, 30, 33)
    g = rng.uniform(-1, 1, 33)
    pp, pc = pure.softmax(x), core.softmax(x)
    assert close(pp, pc)
    assert abs(pc.sum() - 1.0) < 1e-12
    assert close(pure.softmax_bwd(g, pp), core.softmax_bwd(g, pp))


def test_cosine(rng):
    M = rng.uniform(-2, 2, (9, 5))
    k = rng.uniform(-2, 2, 5)
    g = rng.uniform(-1, 1, 9)
    sp, rnp, knp = pure.cosine_rows(M, k, 1e-8)
    sc, rnc, knc = core.cosine_rows(M, k, 1e-8)
    assert close(sp, sc) and close(rnp, rnc) and np.isclose(knp, knc)
    gp = pure.cosine_rows_bwd(g, M, k, sp, rnp, knp, 1e-8)
    gc = core.cosine_rows_bwd(g, M, k, sp, rnp, knp, 1e-8)
    assert close(gp[0], gc[0]) and close(gp[1], gc[1])

    u, v = rng.uniform(-2, 2, 7), rng.uniform(-2, 2, 7)
    cp = pure.cosine_vec(u, v, 1e-8)
    cc = core.cosine_vec(u, v, 1e-8)
    assert np.isclose(cp[0], cc[0])
    gup, gvp = pure.cosine_vec_bwd(0.3, u, v, *cp, 1e-8)
    guc, gvc = core.cosine_vec_bwd(0.3, u, v, *cc, 1e-8)
    assert close(gup, guc) and close(gvp, gvc)


def test_zero_vector_eps_guard():
    z = np.zeros(4)
    v = np.ones(4)
    cp = pure.cosine_vec(z, v, 1e-8)
    cc = core.cosine_vec(z, v, 1e-8)
    assert cp[0] == cc[0] == 0.0
    gp = pure.cosine_vec_bwd(1.0, z, v, *cp, 1e-8)
    gc = core.cosine_vec_bwd(1.0, z, v, *cc, 1e-8)
    assert close(gp[0], gc[0]) and close(gp[1], gc[1])


def test_circular_convolution(rng):
    for n, k in [(5, 3), (8, 5), (3, 3)]:
        w = rng.uniform(0, 1, n)
        s = rng.uniform(0, 1, k)
        g = rng.uniform(-1, 1, n)
        assert close(pure.circ_conv(w, s), core.circ_conv(w, s))
        gwp, gsp = pure.circ_conv_bwd(g, w, s)
        gwc, gsc = core.circ_conv_bwd(g, w, s)
        assert close(gwp, gwc) and close(gsp, gsc)


def test_pow_norm(rng):
    w = rng.uniform(0, 1, 11)
    w[3] = 0.0   # exercise the zero-entry path
    g = rng.uniform(-1, 1, 11)
    for gamma in (1.0, 2.5, 17.0):
        op, pp, tp = pure.pow_norm(w, gamma)
        oc, pc, tc = core.pow_norm(w, gamma)
        assert close(op, oc) and close(pp, pc) and np.isclose(tp, tc)
        gwp, ggp = pure.pow_norm_bwd(g, w, gamma, op, pp, tp)
        gwc, ggc = core.pow_norm_bwd(g, w, gamma, oc, pc, tc)
        assert close(gwp, gwc) and np.isclose(ggp, ggc)


def test_lstm_gates(rng):
    d = 16
    z = rng.uniform(-3, 3, 4 * d)
    c = rng.uniform(-1, 1, d)
    outp = pure.lstm_gates(z, c)
    outc = core.lstm_gates(z, c)
    for a, b in zip(outp, outc):
        assert close(a, b)
    gh, gc = rng.uniform(-1, 1, d), rng.uniform(-1, 1, d)
    dzp, dcp = pure.lstm_gates_bwd(gh, gc, c, *outp[2:])
    dzc, dcc = core.lstm_gates_bwd(gh, gc, c, *outc[2:])
    assert close(dzp, dzc) and close(dcp, dcc)


def test_erase_add(rng):
    M = rng.uniform(-1, 1, (6, 4))
    w = rng.uniform(0, 1, 6)
    e = rng.uniform(0, 1, 4)
    a = rng.uniform(-1, 1, 4)
    g = rng.uniform(-1, 1, (6, 4))
    assert close(pure.erase_add(M, w, e, a), core.erase_add(M, w, e, a))
    for gp, gc in zip(pure.erase_add_bwd(g, M, w, e, a),
                      core.erase_add_bwd(g, M, w, e, a)):
        assert close(gp, gc)


def test_backend_selection_reports():
    import cntm

    assert cntm.kernel_backend in ("compiled", "pure")
