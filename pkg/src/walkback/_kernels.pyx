# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the functions in ``_kernels_py``.

Dense layers use numpy's BLAS matmul with fused bias, affine and
piecewise-linear tails in C; smooth activations use numpy's vectorised
ufuncs, which beat scalar libm calls.  Gaussian log-densities, path enumeration and
chain walks are C loops.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport log

cnp.import_array()

from ._kernels_py import sigmoid as _sigmoid_np, softplus as _softplus_np

cdef enum:
    IDENTITY = 0
    RELU = 1
    LEAKY_RELU = 2
    TANH = 3
    SIGMOID = 4
    SOFTPLUS = 5

cdef double LEAKY_SLOPE = 0.01
cdef double LOG_2PI = 1.8378770664093453


cdef inline double _act(double u, int act) nogil:
    # piecewise-linear activations only; smooth ones use numpy's vectorised ufuncs
    if act == RELU:
        return u if u > 0 else 0.0
    if act == LEAKY_RELU:
        return u if u > 0 else LEAKY_SLOPE * u
    return u


cdef inline double _act_grad(double u, double a, double sig_u, int act) nogil:
    if act == RELU:
        return 1.0 if u > 0 else 0.0
    if act == LEAKY_RELU:
        return 1.0 if u > 0 else LEAKY_SLOPE
    if act == TANH:
        return 1.0 - a * a
    if act == SIGMOID:
        return a * (1.0 - a)
    if act == SOFTPLUS:
        return sig_u
    return 1.0


def dense_forward(W, b, x, gain, shift, int act):
    if act < 0 or act > 5:
        raise ValueError(f"unknown activation code {act}")
    cdef const double[:, ::1] Wv = np.ascontiguousarray(W, dtype=np.float64)
    cdef const double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef const double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef int B = xv.shape[0]
    cdef int n_in = xv.shape[1]
    cdef int n_out = Wv.shape[0]
    z_arr = np.dot(np.asarray(xv), np.asarray(Wv).T)
    cdef double[:, ::1] zv = z_arr
    cdef int i, j
    cdef bint conditioned = gain is not None
    cdef const double[::1] gv, sv
    if conditioned:
        gv = np.ascontiguousarray(gain, dtype=np.float64)
        sv = np.ascontiguousarray(shift, dtype=np.float64)
        u_arr = np.empty((B, n_out))
    else:
        u_arr = z_arr
    a_arr = np.empty((B, n_out))
    cdef double[:, ::1] uv = u_arr
    cdef double[:, ::1] av = a_arr
    cdef bint smooth = act == TANH or act == SIGMOID or act == SOFTPLUS
    with nogil:
        for i in range(B):
            for j in range(n_out):
                zv[i, j] += bv[j]
                if conditioned:
                    uv[i, j] = zv[i, j] * gv[j] + sv[j]
                if not smooth:
                    av[i, j] = _act(uv[i, j], act)
    if act == TANH:
        np.tanh(u_arr, out=a_arr)
    elif act == SIGMOID:
        a_arr[...] = _sigmoid_np(u_arr)
    elif act == SOFTPLUS:
        a_arr[...] = _softplus_np(u_arr)
    return z_arr, u_arr, a_arr


def dense_backward(W, x, z, u, a, gain, da, int act, dW, db, dgain, dshift):
    cdef const double[:, ::1] Wv = np.ascontiguousarray(W, dtype=np.float64)
    cdef const double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[:, ::1] zv = np.ascontiguousarray(z, dtype=np.float64)
    cdef const double[:, ::1] uv = np.ascontiguousarray(u, dtype=np.float64)
    cdef const double[:, ::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef const double[:, ::1] dav = np.ascontiguousarray(da, dtype=np.float64)
    # the softplus derivative needs sigmoid(u); take it vectorised
    cdef const double[:, ::1] sgv = _sigmoid_np(u) if act == SOFTPLUS else av
    cdef double[::1] dbv = db
    cdef int B = xv.shape[0]
    cdef int n_in = xv.shape[1]
    cdef int n_out = Wv.shape[0]
    cdef bint conditioned = gain is not None
    cdef const double[::1] gv
    cdef double[::1] dgv, dsv
    if conditioned:
        gv = np.ascontiguousarray(gain, dtype=np.float64)
        dgv = dgain
        dsv = dshift
    dz_arr = np.empty((B, n_out))
    cdef double[:, ::1] dzv = dz_arr
    cdef double du
    cdef int i, j
    with nogil:
        for i in range(B):
            for j in range(n_out):
                du = dav[i, j] * _act_grad(uv[i, j], av[i, j], sgv[i, j], act)
                if conditioned:
                    dgv[j] += du * zv[i, j]
                    dsv[j] += du
                    du = du * gv[j]
                dzv[i, j] = du
                dbv[j] += du
    dW += dz_arr.T @ np.asarray(xv)
    return dz_arr @ np.asarray(Wv)


def gaussian_logpdf(x, mu, std):
    cdef const double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[:, ::1] mv = np.ascontiguousarray(mu, dtype=np.float64)
    cdef const double[:, ::1] sv = np.ascontiguousarray(std, dtype=np.float64)
    cdef int B = xv.shape[0]
    cdef int d = xv.shape[1]
    out = np.empty(B)
    cdef double[::1] ov = out
    cdef double acc, r
    cdef int i, j
    with nogil:
        for i in range(B):
            acc = 0.0
            for j in range(d):
                r = (xv[i, j] - mv[i, j]) / sv[i, j]
                acc += -0.5 * LOG_2PI - log(sv[i, j]) - 0.5 * r * r
            ov[i] = acc
    return out


def gaussian_logpdf_grad(x, mu, std):
    cdef const double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[:, ::1] mv = np.ascontiguousarray(mu, dtype=np.float64)
    cdef const double[:, ::1] sv = np.ascontiguousarray(std, dtype=np.float64)
    cdef int B = xv.shape[0]
    cdef int d = xv.shape[1]
    out = np.empty(B)
    dmu = np.empty((B, d))
    dstd = np.empty((B, d))
    cdef double[::1] ov = out
    cdef double[:, ::1] dmv = dmu
    cdef double[:, ::1] dsv = dstd
    cdef double acc, r, inv
    cdef int i, j
    with nogil:
        for i in range(B):
            acc = 0.0
            for j in range(d):
                inv = 1.0 / sv[i, j]
                r = (xv[i, j] - mv[i, j]) * inv
                acc += -0.5 * LOG_2PI - log(sv[i, j]) - 0.5 * r * r
                dmv[i, j] = r * inv
                dsv[i, j] = (r * r - 1.0) * inv
            ov[i] = acc
    return out, dmu, dstd


def path_sums(logA, long s0):
    cdef const double[:, :, ::1] A = np.ascontiguousarray(logA, dtype=np.float64)
    cdef Py_ssize_t K = A.shape[0]
    cdef Py_ssize_t n = A.shape[1]
    cdef Py_ssize_t total = 1
    cdef Py_ssize_t t
    for t in range(K):
        total *= n
    out = np.empty(total)
    cdef double[::1] ov = out
    cdef Py_ssize_t[::1] digits = np.zeros(K + 1, dtype=np.intp)
    cdef double[::1] partial = np.zeros(K + 1)
    cdef Py_ssize_t p, level
    digits[0] = s0
    if K == 0:
        ov[0] = 0.0
        return out
    with nogil:
        # odometer over (s_1..s_K); partial[t] = sum of the first t terms
        for t in range(1, K + 1):
            digits[t] = 0
            partial[t] = partial[t - 1] + A[t - 1, digits[t - 1], 0]
        for p in range(total):
            ov[p] = partial[K]
            level = K
            while level >= 1:
                digits[level] += 1
                if digits[level] < n:
                    break
                digits[level] = 0
                level -= 1
            if level == 0:
                break
            for t in range(level, K + 1):
                partial[t] = partial[t - 1] + A[t - 1, digits[t - 1], digits[t]]
    return out


def categorical_walk(cum, start, uniforms):
    cdef const double[:, ::1] cv = np.ascontiguousarray(cum, dtype=np.float64)
    cdef const double[:, ::1] uv = np.ascontiguousarray(uniforms, dtype=np.float64)
    cdef const long long[::1] sv = np.ascontiguousarray(start, dtype=np.int64)
    cdef Py_ssize_t B = uv.shape[0]
    cdef Py_ssize_t L = uv.shape[1]
    cdef Py_ssize_t n = cv.shape[1]
    out = np.empty((B, L + 1), dtype=np.int64)
    cdef long long[:, ::1] ov = out
    cdef Py_ssize_t i, t, j
    cdef long long s
    cdef double r
    with nogil:
        for i in range(B):
            s = sv[i]
            ov[i, 0] = s
            for t in range(L):
                r = uv[i, t]
                j = 0
                while j < n - 1 and cv[s, j] < r:
                    j += 1
                s = j
                ov[i, t + 1] = s
    return out
