"""Seeded synthetic hyperspectral scenes for desk-scale training.

Each scene is a convex per-pixel mixture of a few smooth spectral
endmembers.  Endmember spectra are low-frequency sinusoid mixtures around
0.5, so their discrete second difference along bands carries a provable
bound (sum of |amplitude| * 2(1-cos omega) over components); convex mixing
preserves both that bound and the [0,1] range.  Abundance maps combine
Gaussian-smoothed noise with a few hard-edged shapes, giving the scenes
spatial structure at more than one scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter


@dataclass
class SyntheticSceneSpec:
    size: int = 48
    bands: int = 8
    n_endmembers: int = 4
    abundance_smoothness: float = 6.0  # gaussian sigma of the soft fields, px
    n_shapes: int = 3                  # hard-edged regions per scene
    n_waves: int = 3                   # sinusoid components per endmember
    max_total_amp: float = 0.45        # cap on summed |amplitudes|
    min_frequency: float = 0.3         # cycles across the band range
    max_frequency: float = 1.5
    seed: int = 0

    def __post_init__(self):
        if self.bands < 2 or self.size < 4 or self.n_endmembers < 1:
            raise ValueError("degenerate scene spec")
        if not 0 < self.max_total_amp <= 0.45:
            raise ValueError("max_total_amp must keep spectra inside [0.05, 0.95]")

    def second_diff_bound(self) -> float:
        """Worst-case |second difference| of any generated spectrum."""
        omega = 2.0 * math.pi * self.max_frequency / (self.bands - 1)
        return self.max_total_amp * 2.0 * (1.0 - math.cos(omega))


def _endmember_spectra(spec: SyntheticSceneSpec, rng) -> np.ndarray:
    """(E, L) spectra: 0.5 + bounded-amplitude sinusoid mixtures."""
    L = spec.bands
    u = np.arange(L) / (L - 1)
    out = np.empty((spec.n_endmembers, L))
    for e in range(spec.n_endmembers):
        freqs = rng.uniform(spec.min_frequency, spec.max_frequency, spec.n_waves)
        phases = rng.uniform(0.0, 2.0 * math.pi, spec.n_waves)
        raw = rng.uniform(0.5, 1.0, spec.n_waves)
        total = rng.uniform(0.25, spec.max_total_amp)
        amps = raw / raw.sum() * total
        s = 0.5 + sum(a * np.sin(2.0 * math.pi * f * u + p)
                      for a, f, p in zip(amps, freqs, phases))
        out[e] = s
    return out


def _abundances(spec: SyntheticSceneSpec, rng) -> np.ndarray:
    """(E, S, S) convex weights: softmax of smooth fields plus shape boosts."""
    S, E = spec.size, spec.n_endmembers
    fields = np.empty((E, S, S))
    for e in range(E):
        noise = rng.standard_normal((S, S))
        f = gaussian_filter(noise, spec.abundance_smoothness, mode="reflect")
        sd = f.std()
        fields[e] = 2.0 * f / (sd if sd > 0 else 1.0)
    rr, cc = np.mgrid[0:S, 0:S]
    for _ in range(spec.n_shapes):
        e = int(rng.integers(E))
        boost = float(rng.uniform(2.0, 4.0))
        if rng.random() < 0.5:
            r0, c0 = rng.integers(0, S - 4, 2)
            h = int(rng.integers(4, max(S // 2, 5)))
            w = int(rng.integers(4, max(S // 2, 5)))
            fields[e, r0:r0 + h, c0:c0 + w] += boost
        else:
            cr, ccol = rng.integers(S // 8, S - S // 8, 2)
            rad = float(rng.uniform(S / 12, S / 4))
            fields[e][(rr - cr) ** 2 + (cc - ccol) ** 2 <= rad * rad] += boost
    z = fields - fields.max(axis=0, keepdims=True)
    w = np.exp(z)
    return w / w.sum(axis=0, keepdims=True)


def make_scene(spec: SyntheticSceneSpec, index: int = 0,
               stream: int = 0) -> np.ndarray:
    """One (L, S, S) cube; (seed, stream, index) fixes it bit-exactly."""
    rng = np.random.default_rng([spec.seed, stream, index])
    spectra = _endmember_spectra(spec, rng)
    abund = _abundances(spec, rng)
    return np.einsum("el,ehw->lhw", spectra, abund, optimize=True)


def make_synthetic_dataset(spec: SyntheticSceneSpec, count: int,
                           stream: int = 0) -> list:
    """``count`` seeded scenes; stream separates train/val draws."""
    return [make_scene(spec, i, stream) for i in range(count)]
