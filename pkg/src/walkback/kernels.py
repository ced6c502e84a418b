"""Kernel backend selection.

The compiled extension is used when it imports; otherwise (or when the
environment variable ``WALKBACK_PURE_PYTHON`` is set to a non-empty value
other than ``0``) the numpy twins in ``_kernels_py`` are used.
"""
import os

from . import _kernels_py

IDENTITY = _kernels_py.IDENTITY
RELU = _kernels_py.RELU
LEAKY_RELU = _kernels_py.LEAKY_RELU
TANH = _kernels_py.TANH
SIGMOID = _kernels_py.SIGMOID
SOFTPLUS = _kernels_py.SOFTPLUS
LEAKY_SLOPE = _kernels_py.LEAKY_SLOPE
LOG_2PI = _kernels_py.LOG_2PI

sigmoid = _kernels_py.sigmoid
softplus = _kernels_py.softplus

KERNEL_NAMES = (
    "dense_forward",
    "dense_backward",
    "gaussian_logpdf",
    "gaussian_logpdf_grad",
    "path_sums",
    "categorical_walk",
)


def _load_compiled():
    if os.environ.get("WALKBACK_PURE_PYTHON", "") not in ("", "0"):
        return None
    try:
        from . import _kernels
    except ImportError:
        return None
    return _kernels


compiled = _load_compiled()
BACKEND = "cython" if compiled is not None else "python"
_impl = compiled if compiled is not None else _kernels_py

dense_forward = _impl.dense_forward
dense_backward = _impl.dense_backward
gaussian_logpdf = _impl.gaussian_logpdf
gaussian_logpdf_grad = _impl.gaussian_logpdf_grad
path_sums = _impl.path_sums
categorical_walk = _impl.categorical_walk


def backends():
    """Map backend name to module for every backend importable here."""
    found = {"python": _kernels_py}
    if compiled is not None:
        found["cython"] = compiled
    return found
