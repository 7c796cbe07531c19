"""Reconstruction quality metrics.

Conventions (fixed, since the literature varies):
  * PSNR is computed per band against the given peak and averaged over
    bands; identical bands are capped at 100 dB.
  * SSIM uses the standard 11x11 Gaussian window (sigma 1.5, truncated and
    renormalized), K1=0.01, K2=0.03, evaluated on interior (valid) pixels,
    per band, then averaged.

No clipping happens here: callers decide how to treat out-of-range values.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PSNR_CAP_DB = 100.0


def _bands(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3:
        raise ValueError(f"expected a 2-d image or 3-d cube, got shape {a.shape}")
    return a


def psnr(a, b, peak: float = 1.0) -> float:
    """Mean over bands of 10*log10(peak^2 / MSE_band), capped at 100 dB."""
    a, b = _bands(a), _bands(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    out = []
    for i in range(a.shape[0]):
        mse = float(np.mean((a[i] - b[i]) ** 2))
        if mse == 0.0:
            out.append(PSNR_CAP_DB)
        else:
            out.append(min(10.0 * np.log10(peak * peak / mse), PSNR_CAP_DB))
    return float(np.mean(out))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    k = np.outer(g, g)
    return k / k.sum()


def _filter_valid(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    win = sliding_window_view(img, kernel.shape)
    return np.einsum("ijuv,uv->ij", win, kernel, optimize=True)


def ssim(a, b, peak: float = 1.0, win_size: int = 11, sigma: float = 1.5) -> float:
    """Mean structural similarity, per band then averaged."""
    a, b = _bands(a), _bands(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.shape[1] < win_size or a.shape[2] < win_size:
        raise ValueError(f"spatial extents {a.shape[1:]} below window {win_size}")
    k = _gaussian_window(win_size, sigma)
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    vals = []
    for i in range(a.shape[0]):
        x, y = a[i], b[i]
        mx = _filter_valid(x, k)
        my = _filter_valid(y, k)
        mxx = _filter_valid(x * x, k)
        myy = _filter_valid(y * y, k)
        mxy = _filter_valid(x * y, k)
        vx = mxx - mx * mx
        vy = myy - my * my
        cov = mxy - mx * my
        num = (2 * mx * my + c1) * (2 * cov + c2)
        den = (mx * mx + my * my + c1) * (vx + vy + c2)
        vals.append(float(np.mean(num / den)))
    return float(np.mean(vals))
