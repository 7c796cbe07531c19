"""Hot-loop kernels with a compiled core and a numpy fallback.

At import we try the Cython extension ``_dynfilter``; if it is missing
(pure-Python install) or ``CASSIKIT_FORCE_NUMPY`` is set to 1/true/yes, the
numpy implementation is used instead.  Both honor the same contract and are
cross-checked in the test suite; ``backend()`` reports which one is live.
"""

from __future__ import annotations

import os

import numpy as np

from . import numpy_backend

_ext = None
if os.environ.get("CASSIKIT_FORCE_NUMPY", "").lower() not in ("1", "true", "yes"):
    try:
        from . import _dynfilter as _ext  # type: ignore[attr-defined]
    except ImportError:
        _ext = None

_BACKEND = "cython" if _ext is not None else "numpy"


def backend() -> str:
    """Name of the active implementation: 'cython' or 'numpy'."""
    return _BACKEND


def _check_shapes(x_pad, kernels, k):
    if kernels.ndim != 4 or x_pad.ndim != 4:
        raise ValueError("dynamic filtering expects 4-d arrays")
    B, KK, H, W = kernels.shape
    if KK != k * k:
        raise ValueError(f"kernels have {KK} taps, expected {k * k}")
    if x_pad.shape[0] != B or x_pad.shape[2] != H + k - 1 or x_pad.shape[3] != W + k - 1:
        raise ValueError(
            f"padded input {x_pad.shape} inconsistent with kernels {kernels.shape} "
            f"and k={k}")


def _common(x_pad, kernels, *rest):
    dtype = np.result_type(x_pad.dtype, kernels.dtype,
                           *[r.dtype for r in rest])
    if dtype not in (np.float32, np.float64):
        dtype = np.float64
    cast = lambda a: np.ascontiguousarray(a, dtype=dtype)
    return dtype, [cast(a) for a in (x_pad, kernels, *rest)]


def dynfilter_forward(x_pad: np.ndarray, kernels: np.ndarray, k: int) -> np.ndarray:
    _check_shapes(x_pad, kernels, k)
    if _ext is None:
        return numpy_backend.dynfilter_forward(x_pad, kernels, k)
    dtype, (xp, kn) = _common(x_pad, kernels)
    B, _, H, W = kn.shape
    out = np.zeros((B, x_pad.shape[1], H, W), dtype=dtype)
    _ext.forward(xp, kn, out, k)
    return out


def dynfilter_backward(x_pad: np.ndarray, kernels: np.ndarray,
                       grad_out: np.ndarray, k: int):
    _check_shapes(x_pad, kernels, k)
    if _ext is None:
        return numpy_backend.dynfilter_backward(x_pad, kernels, grad_out, k)
    dtype, (xp, kn, g) = _common(x_pad, kernels, grad_out)
    gx = np.zeros_like(xp)
    gk = np.zeros_like(kn)
    _ext.backward(xp, kn, g, gx, gk, k)
    return gx, gk
