"""Data-fidelity updates in shifted coordinates.

Because AA^T is diagonal for this operator (disjoint per-band placements of
one mask), projecting an estimate onto {x : Ax = y} is elementwise:

    x' = x - A^T ( (Ax - y) / (diag + eta) )

eta >= 0 regularizes the projection; eta = 0 with a strictly positive diag
is the exact pseudoinverse step.  Detector pixels never covered by any
shifted mask have diag = 0 and, at eta = 0, carry residual the model cannot
explain; their update contribution is zeroed and counted (``dead_pixels``
in the diagnostics dict).

Two parallel implementations: plain numpy (baseline/tests) and tape ops
(training), kept adjacent so their algebra stays in sync.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .cassi import DispersionSpec, _mask, mask_digest, shifted_mask_stack


@dataclass
class AAtDiag:
    """Diagonal of AA^T on the detector grid, with mask provenance."""
    values: np.ndarray
    mask_digest: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if np.any(self.values < 0):
            raise ValueError("AA^T diagonal must be nonnegative")


@dataclass
class FidelityParams:
    """Knobs for the fidelity step.

    eta: BP regularizer (>= 0).  gamma: step size for gradient mode (> 0).
    weight_mode: 'identity' or 'diagonal' (inverse-noise weighting W given
    as a detector-shaped array in ``weight``).
    """
    eta: float = 1e-2
    gamma: float = 1.0
    weight_mode: str = "identity"
    weight: np.ndarray | None = None

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError("eta must be >= 0")
        if self.gamma <= 0:
            raise ValueError("gamma must be > 0")
        if self.weight_mode not in ("identity", "diagonal"):
            raise ValueError(f"unknown weight mode {self.weight_mode!r}")
        if self.weight_mode == "diagonal" and self.weight is None:
            raise ValueError("diagonal weighting needs a weight array")


def compute_AAt_diag(mask, n_bands: int,
                     spec: DispersionSpec = DispersionSpec()) -> AAtDiag:
    """diag(AA^T)[d] = sum_i (shifted mask i at d)^2; band count per pixel
    for binary masks."""
    mstack = shifted_mask_stack(mask, n_bands, spec)
    return AAtDiag(values=np.einsum("lhw,lhw->hw", mstack, mstack),
                   mask_digest=mask_digest(_mask(mask)))


def _apply_forward(xs: np.ndarray, mstack: np.ndarray) -> np.ndarray:
    return np.einsum("lhw,lhw->hw", mstack, xs, optimize=True)


def bp_update(xs: np.ndarray, y: np.ndarray, mstack: np.ndarray,
              diag: AAtDiag | np.ndarray, eta: float = 0.0,
              diagnostics: dict | None = None) -> np.ndarray:
    """One regularized back-projection step on a shifted cube."""
    d = diag.values if isinstance(diag, AAtDiag) else np.asarray(diag)
    if xs.shape != mstack.shape:
        raise ValueError(f"estimate {xs.shape} vs mask stack {mstack.shape}")
    if y.shape != d.shape or y.shape != xs.shape[1:]:
        raise ValueError(f"measurement {y.shape} inconsistent with cube {xs.shape}")
    r = _apply_forward(xs, mstack) - y
    denom = d + eta
    live = denom > 0
    scaled = np.zeros_like(r)
    np.divide(r, denom, out=scaled, where=live)
    if diagnostics is not None:
        diagnostics["dead_pixels"] = int(np.count_nonzero(~live))
    return xs - mstack * scaled[None]


def gradient_step(xs: np.ndarray, y: np.ndarray, mstack: np.ndarray,
                  params: FidelityParams) -> np.ndarray:
    """Weighted gradient step x - 2*gamma*A^T W^T W (Ax - y)."""
    r = _apply_forward(xs, mstack) - y
    if params.weight_mode == "diagonal":
        w = np.asarray(params.weight)
        if w.shape != y.shape:
            raise ValueError(f"weight {w.shape} does not match measurement {y.shape}")
        r = (w * w) * r
    return xs - 2.0 * params.gamma * mstack * r[None]


def residual_norm(xs: np.ndarray, y: np.ndarray, mstack: np.ndarray) -> float:
    """||Ax - y|| / ||y||, or the absolute norm when y = 0."""
    r = _apply_forward(xs, mstack) - y
    rn = float(np.linalg.norm(r))
    yn = float(np.linalg.norm(y))
    return rn / yn if yn > 0 else rn


# ---------------------------------------------------------------------------
# tape versions (batched, NCHW-style: cube (B, L, H, Wp), measurement (B, H, Wp))
# ---------------------------------------------------------------------------

def bp_update_t(xs: ad.Tensor, y: ad.Tensor, mstack: ad.Tensor,
                diag: ad.Tensor, eta: ad.Tensor) -> ad.Tensor:
    """Tape twin of bp_update; eta must be strictly positive (learned etas
    come through softplus so the division is always safe)."""
    B = xs.shape[0]
    Ax = ad.reduce_sum(ad.mul(xs, mstack), axis=1)
    r = ad.sub(Ax, y)
    scaled = ad.div(r, ad.add(diag, eta))
    upd = ad.mul(mstack, ad.reshape(scaled, (B, 1) + scaled.shape[1:]))
    return ad.sub(xs, upd)


def residual_norm_t(xs: ad.Tensor, y: ad.Tensor, mstack: ad.Tensor) -> float:
    """Monitoring value (detached): mean relative residual over the batch."""
    with ad.no_grad():
        Ax = ad.reduce_sum(ad.mul(xs, mstack), axis=1)
        r = Ax.data - y.data
    rn = np.linalg.norm(r.reshape(r.shape[0], -1), axis=1)
    yn = np.linalg.norm(y.data.reshape(y.shape[0], -1), axis=1)
    safe = np.where(yn > 0, yn, 1.0)
    return float(np.mean(rn / safe))
