import numpy as np
import pytest

from lmtag import tensor as T


def finite_diff_check(loss_fn, params, rel_tol=1e-4, eps=1e-5, max_entries=6,
                      rng=None):
    """Compare reverse-mode gradients of loss_fn() against central finite
    differences on a sample of entries of each parameter.

    loss_fn must rebuild the graph from the current parameter values on
    every call and return a scalar Node.
    """
    rng = rng or np.random.default_rng(0)
    loss = loss_fn()
    for p in params:
        p.zero_grad()
    T.backward(loss)
    for p in params:
        assert p.grad is not None, f"no gradient reached {p.name}"
        flat = p.value.reshape(-1)
        gflat = p.grad.reshape(-1)
        n = flat.size
        picks = range(n) if n <= max_entries else rng.choice(n, max_entries, replace=False)
        for i in picks:
            orig = flat[i]
            flat[i] = orig + eps
            up = float(loss_fn().value)
            flat[i] = orig - eps
            down = float(loss_fn().value)
            flat[i] = orig
            fd = (up - down) / (2 * eps)
            # the scale floor keeps roundoff noise in the central difference
            # (about machine_eps / eps ~ 2e-11) from failing near-zero entries
            scale = max(abs(fd), abs(gflat[i]), 1e-6)
            assert abs(gflat[i] - fd) / scale <= rel_tol, (
                f"{p.name}[{i}]: autodiff {gflat[i]} vs fd {fd}"
            )


@pytest.fixture
def np_rng():
    return np.random.default_rng(12345)
