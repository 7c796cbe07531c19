"""Frequency-aware skip fusion for the U-shaped denoiser.

The skip combine at each decoder level takes the encoder feature F_enc
(high resolution, C channels) and the decoder feature F_dec (half
resolution, 2C channels) and produces one C-channel map at encoder
resolution:

  plain path   : F_enc + bilinear_up(align(F_dec))
  fused path   : hpf_enhance(F_enc) + bilinear_up(lpf_smooth(align(F_dec)))

align is a 1x1 conv.  The low-pass arm predicts a normalized k x k kernel
per pixel (softmax over taps) from the aligned decoder feature and applies
it before upsampling, so the decoder signal arrives smooth; the high-pass
arm predicts blur kernels from the concatenated context and sharpens the
encoder feature by adding back its detail residual (x - blur(x)).  Constant
inputs are fixed points of both arms because every predicted kernel sums
to one.

With fusion disabled the combine reduces *bit-identically* to the plain
path (same align weights, same upsampler), which is what the ablation flag
toggles.  An optional offset arm resamples the upsampled decoder feature
along predicted sub-pixel offsets (bounded to +-2 px); it is off by
default and excluded from headline numbers.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def _softmax_taps(logits: Tensor) -> Tensor:
    """Softmax over the tap axis of (B, k*k, H, W) logit maps."""
    t = ad.transpose(logits, (0, 2, 3, 1))
    t = ad.softmax(t)
    return ad.transpose(t, (0, 3, 1, 2))


def predict_kernels(feat: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Per-pixel normalized filter taps from a 1x1-conv head."""
    return _softmax_taps(ad.conv1x1(feat, w, b))


def align_channels(f_dec: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Project decoder channels onto the encoder channel count."""
    return ad.conv1x1(f_dec, w, b)


def dynamic_blur(x: Tensor, kernels: Tensor, ksize: int) -> Tensor:
    """Filter x with per-pixel kernels under reflect padding."""
    p = ksize // 2
    xp = ad.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), mode="reflect")
    return ad.dynamic_filter(xp, kernels, ksize)


def lpf_upsample(aligned: Tensor, w: Tensor, b: Tensor, ksize: int = 3) -> Tensor:
    """Smooth with predicted low-pass kernels, then 2x bilinear upsample."""
    kern = predict_kernels(aligned, w, b)
    return ad.upsample_bilinear2d(dynamic_blur(aligned, kern, ksize))


def hpf_enhance(f_enc: Tensor, context: Tensor, w: Tensor, b: Tensor,
                ksize: int = 3) -> Tensor:
    """Sharpen the encoder feature: x + (x - blur(x)) with predicted blurs."""
    kern = predict_kernels(context, w, b)
    blurred = dynamic_blur(f_enc, kern, ksize)
    return ad.sub(ad.scalar_mul(f_enc, 2.0), blurred)


def neighbor_cosine_maps(f: Tensor, eps: float = 1e-8) -> Tensor:
    """Cosine similarity of each pixel's channel vector with its 8 neighbors.

    Border neighbors fall on zero padding (similarity 0).  Output (B,8,H,W).
    """
    sq = ad.reduce_sum(ad.mul(f, f), axis=1, keepdims=True)
    norm = ad.div(f, ad.sqrt(sq + eps))
    B, C, H, W = f.shape
    maps = []
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == 0 and dc == 0:
                continue
            padded = ad.pad(norm, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="constant")
            shifted = ad.slice_(padded, (slice(None), slice(None),
                                         slice(1 + dr, 1 + dr + H),
                                         slice(1 + dc, 1 + dc + W)))
            maps.append(ad.reduce_sum(ad.mul(norm, shifted), axis=1, keepdims=True))
    return ad.concat(maps, axis=1)


def offset_resample(f: Tensor, guidance: Tensor, w: Tensor, b: Tensor,
                    max_offset: float = 2.0) -> Tensor:
    """Resample f along predicted offsets, bounded to +-max_offset pixels.

    Offsets come from a 1x1-conv head over the guidance maps through a tanh
    squash, so zero head weights give exactly zero offsets and the identity.
    """
    raw = ad.conv1x1(guidance, w, b)
    # tanh(x) written as 2*sigmoid(2x) - 1
    squashed = ad.scalar_mul(ad.sigmoid(ad.scalar_mul(raw, 2.0)), 2.0) - 1.0
    offsets = ad.scalar_mul(squashed, max_offset)
    return ad.grid_resample(f, offsets)


def build_fusion_params(store, prefix: str, c_enc: int, c_dec: int,
                        ksize: int = 3, use_offset: bool = False) -> None:
    """Register one skip-combine's parameters under ``prefix``.

    The align projection gets the usual fan-in scaling; both kernel heads
    and the offset head start at zero, i.e. uniform taps and zero offsets.
    """
    store.randn(f"{prefix}align.w", (c_enc, c_dec), scale=1.0 / np.sqrt(c_dec))
    store.zeros(f"{prefix}align.b", (c_enc,))
    kk = ksize * ksize
    store.zeros(f"{prefix}lpf.w", (kk, c_enc))
    store.zeros(f"{prefix}lpf.b", (kk,))
    store.zeros(f"{prefix}hpf.w", (kk, 2 * c_enc))
    store.zeros(f"{prefix}hpf.b", (kk,))
    if use_offset:
        store.zeros(f"{prefix}offset.w", (2, 8))
        store.zeros(f"{prefix}offset.b", (2,))


def fuse_skip(f_enc: Tensor, f_dec: Tensor, store, prefix: str,
              use_fusion: bool = True, use_offset: bool = False,
              ksize: int = 3) -> Tensor:
    """Full skip combine; see module docstring for both paths."""
    aligned = align_channels(f_dec, store[f"{prefix}align.w"],
                             store[f"{prefix}align.b"])
    if not use_fusion:
        return ad.add(f_enc, ad.upsample_bilinear2d(aligned))
    dec_up = lpf_upsample(aligned, store[f"{prefix}lpf.w"],
                          store[f"{prefix}lpf.b"], ksize)
    context = ad.concat([f_enc, ad.upsample_bilinear2d(aligned)], axis=1)
    enc_sharp = hpf_enhance(f_enc, context, store[f"{prefix}hpf.w"],
                            store[f"{prefix}hpf.b"], ksize)
    if use_offset:
        guidance = neighbor_cosine_maps(f_enc)
        dec_up = offset_resample(dec_up, guidance, store[f"{prefix}offset.w"],
                                 store[f"{prefix}offset.b"])
    return ad.add(enc_sharp, dec_up)
