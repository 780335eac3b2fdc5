import numpy as np
import pytest

from cntm import autodiff as ad


def finite_difference(f, tensor, step=1e-5):
    """Central finite differences of a scalar-valued f() w.r.t. one tensor.

    f is re-evaluated with tensor.data perturbed in place; it must not
    depend on any other mutated state.
    """
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f()
        flat[i] = orig - step
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return grad


def max_rel_err(analytic, estimate, floor=1e-5):
    analytic = np.asarray(analytic)
    estimate = np.asarray(estimate)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(estimate)), floor)
    return float(np.max(np.abs(analytic - estimate) / denom))


def check_gradients(build, tensors, tol=1e-4, step=1e-5):
    """Assert analytic gradients of build() match finite differences.

    build() must construct the full forward pass from the given leaf
    tensors and return the scalar loss tensor.
    """
    for t in tensors:
        t.zero_grad()
    with ad.record() as rec:
        loss = build()
        rec.backward(loss)

    def value():
        return float(build().data)

    for t in tensors:
        est = finite_difference(value, t, step=step)
        got = t.grad if t.grad is not None else np.zeros_like(t.data)
        err = max_rel_err(got, est)
        assert err <= tol, f"gradient mismatch {err:.3e} (tol {tol:.0e})"


@pytest.fixture
def rng():
    return np.random.default_rng(20250808)
