"""Pure numpy implementations of the hot kernels.

Every function here has a twin with the same signature in ``_kernels.pyx``.
Outputs agree to rounding (not bit-for-bit: BLAS and loop orders differ).
"""
import numpy as np

IDENTITY, RELU, LEAKY_RELU, TANH, SIGMOID, SOFTPLUS = range(6)
LEAKY_SLOPE = 0.01
LOG_2PI = float(np.log(2.0 * np.pi))


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x):
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


def _activate(u, act):
    if act == IDENTITY:
        return u.copy()
    if act == RELU:
        return np.maximum(u, 0.0)
    if act == LEAKY_RELU:
        return np.where(u > 0, u, LEAKY_SLOPE * u)
    if act == TANH:
        return np.tanh(u)
    if act == SIGMOID:
        return sigmoid(u)
    if act == SOFTPLUS:
        return softplus(u)
    raise ValueError(f"unknown activation code {act}")


def _activation_grad(u, a, act):
    if act == IDENTITY:
        return np.ones_like(u)
    if act == RELU:
        return (u > 0).astype(np.float64)
    if act == LEAKY_RELU:
        return np.where(u > 0, 1.0, LEAKY_SLOPE)
    if act == TANH:
        return 1.0 - a * a
    if act == SIGMOID:
        return a * (1.0 - a)
    if act == SOFTPLUS:
        return sigmoid(u)
    raise ValueError(f"unknown activation code {act}")


def dense_forward(W, b, x, gain, shift, act):
    """Return (z, u, a) for ``a = act(gain * (x @ W.T + b) + shift)``.

    ``gain``/``shift`` are single rows or None (then ``u`` is ``z``).
    """
    z = x @ W.T + b
    if gain is None:
        u = z
    else:
        u = z * gain + shift
    return z, u, _activate(u, act)


def dense_backward(W, x, z, u, a, gain, da, act, dW, db, dgain, dshift):
    """Accumulate parameter gradients in place and return the input gradient."""
    du = da * _activation_grad(u, a, act)
    if gain is None:
        dz = du
    else:
        dgain += (du * z).sum(axis=0)
        dshift += du.sum(axis=0)
        dz = du * gain
    dW += dz.T @ x
    db += dz.sum(axis=0)
    return dz @ W


def gaussian_logpdf(x, mu, std):
    r = (x - mu) / std
    return (-0.5 * LOG_2PI - np.log(std) - 0.5 * r * r).sum(axis=1)


def gaussian_logpdf_grad(x, mu, std):
    """Row log-densities with their gradients w.r.t. mean and std."""
    diff = x - mu
    inv = 1.0 / std
    r = diff * inv
    logp = (-0.5 * LOG_2PI - np.log(std) - 0.5 * r * r).sum(axis=1)
    dmu = r * inv
    dstd = (r * r - 1.0) * inv
    return logp, dmu, dstd


def path_sums(logA, s0):
    """Sum ``logA[t][s_{t-1}, s_t]`` along every path of length K from ``s0``.

    Paths are listed in lexicographic order of ``(s_1, ..., s_K)`` with
    ``s_K`` varying fastest.
    """
    logA = np.asarray(logA, dtype=np.float64)
    K = logA.shape[0]
    acc = np.zeros(1)
    prev = np.array([s0], dtype=np.int64)
    n = logA.shape[1]
    for t in range(K):
        acc = (acc[:, None] + logA[t][prev]).reshape(-1)
        prev = np.tile(np.arange(n, dtype=np.int64), prev.size)
    return acc


def categorical_walk(cum, start, uniforms):
    """Walk a chain with row-cumulative matrix ``cum`` driven by ``uniforms``.

    ``uniforms`` has shape (B, L); the returned int64 array has shape
    (B, L + 1) with the start states in column 0.
    """
    B, L = uniforms.shape
    n = cum.shape[1]
    out = np.empty((B, L + 1), dtype=np.int64)
    out[:, 0] = start
    s = np.asarray(start, dtype=np.int64)
    for t in range(L):
        s = np.minimum((cum[s] < uniforms[:, t:t + 1]).sum(axis=1), n - 1)
        out[:, t + 1] = s
    return out
