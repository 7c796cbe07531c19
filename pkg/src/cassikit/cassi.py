"""CASSI measurement physics.

A scene is a nonnegative cube with band-major planes, shape (L, H, W).  The
disperser translates band i (1-based) laterally by step*(i-1) pixels before
the coded mask planes are summed on the detector, so the snapshot has shape
(H, W + step*(L-1)).

All solver math happens in *shifted coordinates*: the cube after per-band
dispersion, shape (L, H, Wp) with Wp = W + step*(L-1).  There the forward
operator is nothing but mask-multiply-and-sum and its Gram matrix AA^T is
diagonal.  Bands are unshifted only when a cube leaves the solver.

Dense-oracle convention (used by the tests, never in the solver path):
vec() is C-order; the shifted cube is vectorized band-major, giving
A = [D_1 ... D_L] with D_i = diag(vec(shifted mask i)), so that
vec(y) = A . vec(x_shifted).
"""

from __future__ import annotations

from dataclasses import dataclass, field
import hashlib

import numpy as np


@dataclass
class DispersionSpec:
    """Lateral dispersion: band i shifts by step*(i-1) pixels along width."""
    step: int = 1

    def __post_init__(self):
        if int(self.step) != self.step or self.step < 1:
            raise ValueError(f"dispersion step must be a positive integer, got {self.step}")
        self.step = int(self.step)

    def detector_width(self, W: int, L: int) -> int:
        return W + self.step * (L - 1)


@dataclass
class NoiseSpec:
    """Additive measurement noise; sigma in detector units."""
    model: str = "none"          # none | gaussian
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.model not in ("none", "gaussian"):
            raise ValueError(f"unknown noise model {self.model!r}")
        if self.sigma < 0:
            raise ValueError("noise sigma must be >= 0")


@dataclass
class HsiCube:
    """Hyperspectral cube, band-major planes (L, H, W)."""
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 3:
            raise ValueError(f"cube must be 3-d (bands, H, W), got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("cube contains non-finite values")

    @property
    def bands(self):
        return self.values.shape[0]

    @property
    def height(self):
        return self.values.shape[1]

    @property
    def width(self):
        return self.values.shape[2]


@dataclass
class CodedMask:
    """Binary aperture pattern (H, W)."""
    pattern: np.ndarray

    def __post_init__(self):
        self.pattern = np.asarray(self.pattern)
        if self.pattern.ndim != 2:
            raise ValueError(f"mask must be 2-d, got {self.pattern.shape}")
        vals = np.unique(self.pattern)
        if not np.all(np.isin(vals, (0, 1))):
            raise ValueError("mask entries must be binary (0/1)")

    @property
    def height(self):
        return self.pattern.shape[0]

    @property
    def width(self):
        return self.pattern.shape[1]


@dataclass
class Measurement:
    """Detector snapshot (H, W + step*(L-1))."""
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2:
            raise ValueError(f"measurement must be 2-d, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("measurement contains non-finite values")


def _arr(x, attr):
    return getattr(x, attr, x)


def _cube(x) -> np.ndarray:
    return np.asarray(_arr(x, "values"))


def _mask(m) -> np.ndarray:
    return np.asarray(_arr(m, "pattern"))


def _meas(y) -> np.ndarray:
    return np.asarray(_arr(y, "values"))


# ---------------------------------------------------------------------------
# shifts
# ---------------------------------------------------------------------------

def shift_band(plane: np.ndarray, band_index: int, n_bands: int,
               spec: DispersionSpec = DispersionSpec()) -> np.ndarray:
    """Embed an (H, W) plane into the detector frame at its band offset.

    band_index is 1-based; the plane lands in columns
    [step*(band_index-1), step*(band_index-1)+W), zeros elsewhere.
    """
    if not 1 <= band_index <= n_bands:
        raise ValueError(f"band index {band_index} outside 1..{n_bands}")
    plane = np.asarray(plane)
    H, W = plane.shape
    out = np.zeros((H, spec.detector_width(W, n_bands)), dtype=plane.dtype)
    off = spec.step * (band_index - 1)
    out[:, off:off + W] = plane
    return out


def unshift_band(plane: np.ndarray, band_index: int, width: int,
                 spec: DispersionSpec = DispersionSpec()) -> np.ndarray:
    """Inverse of shift_band on its range: extract the band's W columns."""
    plane = np.asarray(plane)
    off = spec.step * (band_index - 1)
    if band_index < 1 or off + width > plane.shape[1]:
        raise ValueError(f"band index {band_index} out of range for width "
                         f"{plane.shape[1]} (W={width}, step={spec.step})")
    return np.ascontiguousarray(plane[:, off:off + width])


def shift_cube(cube, spec: DispersionSpec = DispersionSpec()) -> np.ndarray:
    """(L, H, W) -> shifted coordinates (L, H, Wp)."""
    x = _cube(cube)
    L, H, W = x.shape
    out = np.zeros((L, H, spec.detector_width(W, L)), dtype=x.dtype)
    for i in range(L):
        off = spec.step * i
        out[i, :, off:off + W] = x[i]
    return out


def unshift_cube(xs: np.ndarray, width: int,
                 spec: DispersionSpec = DispersionSpec()) -> np.ndarray:
    """Shifted (L, H, Wp) -> scene coordinates (L, H, width)."""
    xs = np.asarray(xs)
    L = xs.shape[0]
    out = np.empty((L, xs.shape[1], width), dtype=xs.dtype)
    for i in range(L):
        off = spec.step * i
        out[i] = xs[i, :, off:off + width]
    return out


def shifted_mask(mask, band_index: int, n_bands: int,
                 spec: DispersionSpec = DispersionSpec()) -> np.ndarray:
    """The mask pattern placed at band_index's detector offset."""
    return shift_band(_mask(mask), band_index, n_bands, spec)


def shifted_mask_stack(mask, n_bands: int,
                       spec: DispersionSpec = DispersionSpec()) -> np.ndarray:
    """All shifted masks at once, shape (L, H, Wp)."""
    m = _mask(mask)
    H, W = m.shape
    out = np.zeros((n_bands, H, spec.detector_width(W, n_bands)), dtype=np.float64)
    for i in range(n_bands):
        off = spec.step * i
        out[i, :, off:off + W] = m
    return out


# ---------------------------------------------------------------------------
# permutation identity
# ---------------------------------------------------------------------------

def verify_perm_identity(v: np.ndarray, perm: np.ndarray,
                         n_probes: int = 100, seed: int = 0) -> float:
    """Max discrepancy of diag(v) P u  vs  P diag(P^T v) u over random probes.

    P is the dense permutation matrix with P[perm[j], j] = 1, i.e. entry j of
    the input moves to position perm[j].  Returns the max abs elementwise
    difference; exact arithmetic would give 0.
    """
    v = np.asarray(v, dtype=np.float64)
    perm = np.asarray(perm)
    n = v.size
    if sorted(perm.tolist()) != list(range(n)):
        raise ValueError("perm is not a bijection on 0..n-1")
    P = np.zeros((n, n))
    P[perm, np.arange(n)] = 1.0
    lhs = np.diag(v) @ P
    rhs = P @ np.diag(P.T @ v)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_probes):
        u = rng.standard_normal(n)
        worst = max(worst, float(np.max(np.abs(lhs @ u - rhs @ u))))
    return worst


# ---------------------------------------------------------------------------
# measurement operator
# ---------------------------------------------------------------------------

def forward_measure(cube, mask, spec: DispersionSpec = DispersionSpec(),
                    noise: NoiseSpec | None = None) -> np.ndarray:
    """Snapshot y = sum_i (shifted mask i) * (shifted band i) + noise."""
    x = _cube(cube)
    m = _mask(mask)
    L, H, W = x.shape
    if m.shape != (H, W):
        raise ValueError(f"mask {m.shape} does not match cube spatial dims {(H, W)}")
    y = np.zeros((H, spec.detector_width(W, L)), dtype=np.float64)
    for i in range(L):
        off = spec.step * i
        y[:, off:off + W] += m * x[i]
    if noise is not None and noise.model == "gaussian" and noise.sigma > 0:
        rng = np.random.default_rng(noise.seed)
        y = y + noise.sigma * rng.standard_normal(y.shape)
    return y


def forward_measure_shifted(xs: np.ndarray, mstack: np.ndarray) -> np.ndarray:
    """Forward operator in shifted coordinates: y = sum_i mstack_i * xs_i."""
    return np.einsum("lhw,lhw->hw", mstack, xs, optimize=True)


def adjoint(meas, mask, n_bands: int, spec: DispersionSpec = DispersionSpec(),
            shifted: bool = True) -> np.ndarray:
    """A^T y: per-band (shifted mask i) * y.

    shifted=True returns the native (L, H, Wp) planes; shifted=False
    unshifts each band back to (L, H, W).
    """
    y = _meas(meas)
    m = _mask(mask)
    H, W = m.shape
    if y.shape != (H, spec.detector_width(W, n_bands)):
        raise ValueError(f"measurement {y.shape} does not match mask {m.shape} "
                         f"with L={n_bands}, step={spec.step}")
    out = shifted_mask_stack(m, n_bands, spec) * y[None]
    if shifted:
        return out
    return unshift_cube(out, W, spec)


def adjoint_shifted(y: np.ndarray, mstack: np.ndarray) -> np.ndarray:
    """Adjoint in shifted coordinates: per-band mask multiply."""
    return mstack * y[None]


# ---------------------------------------------------------------------------
# dense oracle
# ---------------------------------------------------------------------------

def build_dense_operator(mask, n_bands: int,
                         spec: DispersionSpec = DispersionSpec()) -> np.ndarray:
    """Explicit matrix A with vec(y) = A . vec(x_shifted), C-order vecs.

    Shape (H*Wp, L*H*Wp); column block i is diag(vec(shifted mask i)).
    Guarded to tiny instances -- this exists only as a test oracle.
    """
    m = _mask(mask)
    H, W = m.shape
    if H * W * n_bands > 4096:
        raise ValueError(f"dense operator guard: H*W*L = {H * W * n_bands} > 4096")
    mstack = shifted_mask_stack(m, n_bands, spec)
    Wp = mstack.shape[2]
    npix = H * Wp
    A = np.zeros((npix, n_bands * npix))
    for i in range(n_bands):
        A[:, i * npix:(i + 1) * npix] = np.diag(mstack[i].ravel())
    return A


def mask_digest(mask) -> str:
    """Stable content hash of a mask pattern (provenance tag)."""
    m = np.ascontiguousarray(_mask(mask), dtype=np.uint8)
    h = hashlib.sha256()
    h.update(str(m.shape).encode())
    h.update(m.tobytes())
    return h.hexdigest()[:16]
