import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def finite_difference(f, param, h=1e-5):
    """Central differences of scalar ``f()`` with respect to every entry of ``param``."""
    grad = np.zeros_like(param)
    it = np.nditer(param, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = param[idx]
        param[idx] = old + h
        up = f()
        param[idx] = old - h
        down = f()
        param[idx] = old
        grad[idx] = (up - down) / (2 * h)
    return grad


def assert_grad_close(analytic, numeric, rtol=1e-5, atol=1e-8):
    """Relative agreement ``|a - n| <= rtol * max(|a|, |n|) + atol`` entrywise."""
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    bad = np.abs(analytic - numeric) > rtol * scale + atol
    assert not bad.any(), f"max mismatch {np.abs(analytic - numeric).max()}"
