"""Pure-numpy reference implementation of per-pixel dynamic filtering.

The compiled extension (``_dynfilter``) implements the same contract; this
module is both the import-time fallback and the correctness oracle for it.

Contract (see also autodiff.tensor.dynamic_filter):
  x_pad   (B, C, H+k-1, W+k-1)  input, already padded
  kernels (B, k*k, H, W)        one k x k filter per output pixel, row-major taps
  y       (B, C, H, W)          y[b,c,i,j] = sum_uv kernels[b,u*k+v,i,j] * x_pad[b,c,i+u,j+v]
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _windows(x_pad: np.ndarray, k: int) -> np.ndarray:
    # (B, C, H, W, k, k) view, no copy
    return sliding_window_view(x_pad, (k, k), axis=(2, 3))


def dynfilter_forward(x_pad: np.ndarray, kernels: np.ndarray, k: int) -> np.ndarray:
    B = kernels.shape[0]
    H, W = kernels.shape[2], kernels.shape[3]
    win = _windows(x_pad, k)
    kern = kernels.reshape(B, k, k, H, W)
    return np.einsum("bchwuv,buvhw->bchw", win, kern, optimize=True)


def dynfilter_backward(x_pad: np.ndarray, kernels: np.ndarray,
                       grad_out: np.ndarray, k: int):
    B = kernels.shape[0]
    H, W = kernels.shape[2], kernels.shape[3]
    kern = kernels.reshape(B, k, k, H, W)

    gx = np.zeros_like(x_pad)
    for u in range(k):
        for v in range(k):
            gx[:, :, u:u + H, v:v + W] += grad_out * kern[:, None, u, v]

    win = _windows(x_pad, k)
    gk = np.einsum("bchw,bchwuv->buvhw", grad_out, win, optimize=True)
    return gx, np.ascontiguousarray(gk.reshape(B, k * k, H, W))
