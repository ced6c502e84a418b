"""Compiled and pure-numpy kernels must agree."""
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from walkback import _kernels_py as ref
from walkback import kernels

compiled = kernels.backends().get("cython")
needs_compiled = pytest.mark.skipif(compiled is None, reason="compiled extension not built")
ACT_CODES = [kernels.IDENTITY, kernels.RELU, kernels.LEAKY_RELU, kernels.TANH, kernels.SIGMOID,
             kernels.SOFTPLUS]


def test_backend_is_reported():
    assert kernels.BACKEND in kernels.backends()
    for name in kernels.KERNEL_NAMES:
        assert callable(getattr(kernels, name))


def test_env_var_forces_pure_python():
    env = {**os.environ, "WALKBACK_PURE_PYTHON": "1"}
    out = subprocess.run([sys.executable, "-c", "import walkback.kernels as k; print(k.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def _dense_case(rng, B, n_in, n_out, conditioned):
    W = rng.normal(size=(n_out, n_in))
    b = rng.normal(size=n_out)
    x = rng.normal(size=(B, n_in))
    gain = rng.uniform(0.5, 1.5, n_out) if conditioned else None
    shift = rng.normal(size=n_out) if conditioned else None
    return W, b, x, gain, shift


@needs_compiled
@pytest.mark.parametrize("act", ACT_CODES)
@pytest.mark.parametrize("conditioned", [False, True])
def test_dense_forward_backward_agree(act, conditioned):
    rng = np.random.default_rng(act)
    W, b, x, gain, shift = _dense_case(rng, 7, 5, 3, conditioned)
    outs = [impl.dense_forward(W, b, x, gain, shift, act) for impl in (ref, compiled)]
    for a, c in zip(*outs):
        np.testing.assert_allclose(c, a, rtol=1e-13, atol=1e-14)
    z, u, a = outs[0]
    da = rng.normal(size=a.shape)
    grads = []
    for impl in (ref, compiled):
        bufs = [np.zeros_like(W), np.zeros_like(b)]
        bufs += [np.zeros(3), np.zeros(3)] if conditioned else [None, None]
        dx = impl.dense_backward(W, x, z, u, a, gain, da, act, *bufs)
        grads.append([dx] + [g for g in bufs if g is not None])
    for r, c in zip(*grads):
        np.testing.assert_allclose(c, r, rtol=1e-12, atol=1e-13)


@needs_compiled
def test_gaussian_kernels_agree():
    rng = np.random.default_rng(1)
    x, mu = rng.normal(size=(9, 4)), rng.normal(size=(9, 4))
    std = rng.uniform(0.1, 2.0, size=(9, 4))
    np.testing.assert_allclose(compiled.gaussian_logpdf(x, mu, std), ref.gaussian_logpdf(x, mu, std),
                               rtol=1e-14)
    for r, c in zip(ref.gaussian_logpdf_grad(x, mu, std), compiled.gaussian_logpdf_grad(x, mu, std)):
        np.testing.assert_allclose(c, r, rtol=1e-14)


@needs_compiled
def test_read_only_inputs_accepted():
    x = np.broadcast_to(np.zeros(3), (2, 3))
    std = np.broadcast_to(np.ones(3), (2, 3))
    np.testing.assert_allclose(compiled.gaussian_logpdf(x, x, std), -1.5 * kernels.LOG_2PI)


@needs_compiled
@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(0, 4), st.integers(0, 3), st.integers(0, 2 ** 32 - 1))
def test_path_sums_agree(n, K, s0, seed):
    s0 = s0 % n
    logA = np.random.default_rng(seed).normal(size=(K, n, n))
    np.testing.assert_allclose(compiled.path_sums(logA, s0), ref.path_sums(logA, s0), rtol=1e-14,
                               atol=1e-14)


def test_path_sums_order_and_values():
    logA = np.random.default_rng(2).normal(size=(2, 3, 3))
    out = kernels.path_sums(logA, 1)
    expected = [logA[0, 1, a] + logA[1, a, b] for a in range(3) for b in range(3)]
    np.testing.assert_allclose(out, expected, rtol=1e-15)


@needs_compiled
def test_categorical_walk_agrees():
    rng = np.random.default_rng(3)
    P = rng.dirichlet(np.ones(5), size=5)
    cum = np.cumsum(P, axis=1)
    start = rng.integers(0, 5, 50)
    u = rng.random((50, 20))
    np.testing.assert_array_equal(compiled.categorical_walk(cum, start, u),
                                  ref.categorical_walk(cum, start, u))
