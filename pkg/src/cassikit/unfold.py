"""K-stage unfolded reconstruction.

Each stage pulls the iterate toward measurement consistency with the
regularized back-projection, denoises the result, and takes a convex
combination of the two:

    z_k     = bp_update(x_k)
    x_{k+1} = (1 - lambda_k) * D(z_k) + lambda_k * z_k

lambda_k = sigmoid(raw_k) is learned per stage and initialized decreasing
(1 - (k+1)/K, clamped to [0.05, 0.95]) so early stages keep more of the
data-consistent iterate and the final stage trusts the denoiser.  eta_k is
learned through a softplus so the BP division is always safe.

Everything runs in shifted coordinates on batched tensors (B, L, H, Wp);
bands are unshifted only for the returned cube.  The classical baseline
(gap_tv_baseline) alternates the same BP step with channel-wise total
variation denoising.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .cassi import DispersionSpec, _mask, shift_cube, shifted_mask_stack, unshift_cube
from .denoiser import ProxConfig, build_prox_params, prox_forward
from .fidelity import bp_update, compute_AAt_diag, residual_norm
from .fidelity import bp_update_t


@dataclass
class UnfoldConfig:
    stages: int = 3
    weight_sharing: bool = True
    eta_init: float = 1e-2
    capture_intermediates: bool = True
    prox: ProxConfig = None

    def __post_init__(self):
        if self.stages < 1:
            raise ValueError("need at least one stage")
        if self.prox is None:
            raise ValueError("UnfoldConfig needs a ProxConfig")

    def prox_prefix(self, k: int) -> str:
        return "prox." if self.weight_sharing else f"prox{k}."


@dataclass
class Trajectory:
    """Per-run record: estimates x_0..x_K (shifted coords), residuals, lambdas."""
    states: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    lambdas: list = field(default_factory=list)
    oob_fraction: float = 0.0   # fraction of final-cube values outside [0,1]


def lambda_init(k: int, K: int) -> float:
    """Initialization target for stage k's interpolation coefficient."""
    return min(max(1.0 - (k + 1) / K, 0.05), 0.95)


def interpolation_coefficient(k: int, K: int, raw: np.ndarray | None = None) -> float:
    """lambda_k = sigmoid(raw_k); with no raw parameters, the init value."""
    if not 0 <= k < K:
        raise ValueError(f"stage {k} outside 0..{K - 1}")
    if raw is None:
        return lambda_init(k, K)
    r = float(np.asarray(raw).reshape(-1)[k])
    return 1.0 / (1.0 + math.exp(-r))


def _logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def _softplus_inv(y: float) -> float:
    return math.log(math.expm1(y))


def build_unfold_params(store: ParamStore, cfg: UnfoldConfig) -> None:
    """Register stage scalars and the denoiser registry (shared or per stage)."""
    K = cfg.stages
    for k in range(K):
        store.add(f"stage{k}.lambda_raw", np.array(_logit(lambda_init(k, K))))
        store.add(f"stage{k}.eta_raw", np.array(_softplus_inv(cfg.eta_init)))
    if cfg.weight_sharing:
        build_prox_params(store, "prox.", cfg.prox)
    else:
        for k in range(K):
            build_prox_params(store, f"prox{k}.", cfg.prox)


def init_estimate(y: np.ndarray, mstack: np.ndarray, diag: np.ndarray,
                  eps: float = 1e-8) -> np.ndarray:
    """Normalized adjoint start: per band, mask * (y / (diag + eps))."""
    return mstack * (y / (np.asarray(diag) + eps))[None]


def run_stage_t(x: Tensor, y: Tensor, mstack: Tensor, diag: Tensor,
                store: ParamStore, cfg: UnfoldConfig, k: int):
    """One tape stage; returns (x_next, lambda value, z)."""
    eta = ad.softplus(store[f"stage{k}.eta_raw"])
    z = bp_update_t(x, y, mstack, diag, eta)
    d = prox_forward(z, k, store, cfg.prox_prefix(k), cfg.prox)
    lam = ad.sigmoid(store[f"stage{k}.lambda_raw"])
    x_next = ad.add(ad.mul(d, 1.0 - lam), ad.mul(z, lam))
    return x_next, lam, z


def run_t(y: Tensor, mstack: Tensor, diag: Tensor, store: ParamStore,
          cfg: UnfoldConfig, x0: Tensor | None = None):
    """Full unfolded pass on a batch; returns (x_K, states, lambda Tensors)."""
    if x0 is None:
        with_eps = ad.Tensor(np.asarray(diag.data) + 1e-8)
        x0 = ad.mul(mstack, ad.reshape(ad.div(y, with_eps),
                                       (y.shape[0], 1) + y.shape[1:]))
    states = [x0]
    lams = []
    x = x0
    for k in range(cfg.stages):
        x, lam, _ = run_stage_t(x, y, mstack, diag, store, cfg, k)
        states.append(x)
        lams.append(lam)
    return x, states, lams


def run(y: np.ndarray, mask, store: ParamStore, cfg: UnfoldConfig,
        spec: DispersionSpec = DispersionSpec()):
    """Reconstruct one measurement; returns (cube (L,H,W), Trajectory).

    Out-of-range values are reported in the trajectory, never clipped here;
    metric code decides what to do with them.
    """
    m = _mask(mask)
    L = cfg.prox.bands
    W = m.shape[1]
    mstack = shifted_mask_stack(m, L, spec)
    diag = compute_AAt_diag(m, L, spec).values
    dtype = store.dtype
    y = np.asarray(y, dtype=dtype)
    mst = Tensor(mstack.astype(dtype))
    dg = Tensor(diag.astype(dtype))
    yt = Tensor(y[None])
    traj = Trajectory()
    with ad.no_grad():
        xK, states, lams = run_t(yt, mst, dg, store, cfg)
    for s in states:
        xs = s.data[0].astype(np.float64)
        traj.states.append(xs)
        traj.residuals.append(residual_norm(xs, np.asarray(y, np.float64), mstack))
    traj.lambdas = [float(l.data) for l in lams]
    cube = unshift_cube(traj.states[-1], W, spec)
    traj.oob_fraction = float(np.mean((cube < 0.0) | (cube > 1.0)))
    if not cfg.capture_intermediates:
        traj.states = [traj.states[0], traj.states[-1]]
    return cube, traj


# ---------------------------------------------------------------------------
# classical baseline: BP + channel-wise TV
# ---------------------------------------------------------------------------

def _div(px: np.ndarray, py: np.ndarray) -> np.ndarray:
    d = np.zeros_like(px)
    d[0] += px[0]
    d[1:] += px[1:] - px[:-1]
    d[:, 0] += py[:, 0]
    d[:, 1:] += py[:, 1:] - py[:, :-1]
    return d


def _grad(u: np.ndarray):
    gx = np.zeros_like(u)
    gy = np.zeros_like(u)
    gx[:-1] = u[1:] - u[:-1]
    gy[:, :-1] = u[:, 1:] - u[:, :-1]
    return gx, gy


def tv_denoise(f: np.ndarray, weight: float, n_iter: int = 20) -> np.ndarray:
    """argmin_u 0.5*||u - f||^2 + weight*TV(u) by Chambolle's dual iteration.

    Isotropic TV with forward differences; dual step 1/4.
    """
    if weight <= 0:
        return f.copy()
    f = np.asarray(f, dtype=np.float64)
    px = np.zeros_like(f)
    py = np.zeros_like(f)
    tau = 0.25
    for _ in range(n_iter):
        gx, gy = _grad(_div(px, py) - f / weight)
        norm = np.sqrt(gx * gx + gy * gy)
        denom = 1.0 + tau * norm
        px = (px + tau * gx) / denom
        py = (py + tau * gy) / denom
    return f - weight * _div(px, py)


def gap_tv_baseline(y: np.ndarray, mask, n_bands: int,
                    spec: DispersionSpec = DispersionSpec(),
                    iterations: int = 30, tv_weight: float = 0.05,
                    tv_iters: int = 20, eta: float = 0.0):
    """Back-projection alternated with per-band TV denoising.

    TV runs in scene coordinates (unshift, denoise each band, reshift) so
    the smoothing never crosses the zero margins of the shifted frame.
    Returns (cube (L,H,W), per-iteration relative residuals).
    """
    m = _mask(mask)
    W = m.shape[1]
    mstack = shifted_mask_stack(m, n_bands, spec)
    diag = compute_AAt_diag(m, n_bands, spec).values
    y = np.asarray(y, dtype=np.float64)
    x = init_estimate(y, mstack, diag)
    residuals = []
    for _ in range(iterations):
        x = bp_update(x, y, mstack, diag, eta=eta)
        residuals.append(residual_norm(x, y, mstack))
        if tv_weight > 0:
            scene = unshift_cube(x, W, spec)
            for b in range(n_bands):
                scene[b] = tv_denoise(scene[b], tv_weight, tv_iters)
            x = shift_cube(scene, spec)
    x = bp_update(x, y, mstack, diag, eta=eta)
    residuals.append(residual_norm(x, y, mstack))
    return unshift_cube(x, W, spec), residuals
