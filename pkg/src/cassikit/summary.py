"""Model accounting: exact parameter counts and a documented FLOPs estimate.

Parameter counts come from walking the live registry (sum of tensor sizes),
so they are exact by construction.  FLOPs are an estimate under these fixed
conventions, applied per reconstruction of one (H, W, L) cube:

  * one multiply-accumulate = 2 FLOPs
  * dense/1x1 projections: 2*Cin*Cout*N + Cout*N (bias) over N positions
  * attention: projection cost + 2*d*R*Cl for the two attention matmuls
    (R = row dim, Cl = column dim of the score matrix) + 5 FLOPs per score
    entry for the softmax (max pass, subtract, exp, sum, divide)
  * layernorm 9, gelu 10, residual add 1 FLOPs per element
  * average pool 5 and bilinear upsample 8 FLOPs per output element
  * per-pixel dynamic filtering: 2*k^2 per output element per channel, plus
    the kernel head projection and 5*k^2 softmax per pixel
  * BP stage on the shifted grid: (4L + 5) FLOPs per detector pixel
    (forward sum, residual, regularized divide, adjoint spread, update)
"""

from __future__ import annotations

import numpy as np

from .autodiff import ParamStore
from .unfold import UnfoldConfig, build_unfold_params


def count_params(store: ParamStore, prefix: str | None = None) -> int:
    total = 0
    for name, t in store.items():
        if prefix is None or name.startswith(prefix):
            total += t.size
    return total


def _linear(cin, cout, n):
    return 2 * cin * cout * n + cout * n


def _block_flops(c, kind, T, n_windows, ffn_expand, lowrank, use_attention):
    n = T * n_windows
    fl = 0
    if use_attention:
        dq = c if kind == "spectral" else lowrank
        fl += 9 * n * c                       # ln1
        fl += _linear(c, dq, n) * 2 + _linear(c, c, n)   # q, k, v
        if kind == "spectral":
            fl += n_windows * (2 * T * c * c)            # Q^T K
            fl += n_windows * (5 * c * c)                # softmax rows
            fl += n_windows * (2 * c * c * T)            # attn @ V^T
        else:
            fl += n_windows * (2 * dq * T * T)           # Q K^T
            fl += n_windows * (5 * T * T)
            fl += n_windows * (2 * T * T * c)
        fl += _linear(c, c, n)                # out proj
        fl += n * c                           # residual
    fl += 9 * n * c                           # ln2
    e = ffn_expand * c
    fl += _linear(c, e, n) + 10 * n * e + _linear(e, c, n)
    fl += n * c                               # residual
    return fl


def _fuse_flops(c_enc, c_dec, h, w, k, use_fusion):
    # h, w: decoder (low) resolution; encoder runs at 2h x 2w
    fl = _linear(c_dec, c_enc, h * w)                 # align
    fl += 8 * c_enc * 4 * h * w                       # bilinear up of aligned/smoothed
    if not use_fusion:
        return fl + c_enc * 4 * h * w                 # plain add
    kk = k * k
    fl += _linear(c_enc, kk, h * w) + 5 * kk * h * w  # lpf head + tap softmax
    fl += 2 * kk * c_enc * h * w                      # lpf dynamic filtering
    fl += 8 * c_enc * 4 * h * w                       # second upsample (context)
    fl += _linear(2 * c_enc, kk, 4 * h * w) + 5 * kk * 4 * h * w  # hpf head
    fl += 2 * kk * c_enc * 4 * h * w                  # hpf dynamic filtering
    fl += 3 * c_enc * 4 * h * w                       # sharpen combine + fuse add
    return fl


def prox_flops(cfg, H: int, W: int) -> int:
    """FLOPs of one denoiser call on an (H, W) shifted cube."""
    m = cfg.pad_multiple()
    Hp, Wp = H + (-H) % m, W + (-W) % m
    sched = cfg.schedule()
    fl = _linear(cfg.bands, cfg.base_channels, Hp * Wp)
    for lvl in range(cfg.levels):
        c = cfg.channels(lvl)
        h, w = Hp >> lvl, Wp >> lvl
        T = cfg.window * cfg.window
        nwin = (h // cfg.window) * (w // cfg.window)
        dec_count = 2 if lvl < cfg.levels - 1 else 1    # enc + dec at this level
        fl += dec_count * _block_flops(c, sched[lvl], T, nwin, cfg.ffn_expand,
                                       cfg.lowrank_dim(c), cfg.use_attention)
        if lvl < cfg.levels - 1:
            cn = cfg.channels(lvl + 1)
            fl += 5 * c * (h // 2) * (w // 2)           # avg pool
            fl += _linear(c, cn, (h // 2) * (w // 2))   # down projection
            fl += _fuse_flops(c, cn, h // 2, w // 2, cfg.lpf_ksize,
                              cfg.use_freq_fusion)
    fl += _linear(cfg.base_channels, cfg.bands, Hp * Wp)
    if cfg.use_outer_skip:
        fl += cfg.bands * H * W
    return fl


def unfold_flops(ucfg: UnfoldConfig, H: int, W: int) -> dict:
    """Per-reconstruction FLOPs breakdown for a (bands, H, W) scene."""
    L = ucfg.prox.bands
    Wp = W + (L - 1)  # step-1 detector width; configs with step>1 scale this
    bp = (4 * L + 5) * H * Wp
    interp = 4 * L * H * Wp
    prox = prox_flops(ucfg.prox, H, Wp)
    per_stage = bp + prox + interp
    return {
        "init": (2 * L + 2) * H * Wp,
        "bp_per_stage": bp,
        "prox_per_stage": prox,
        "interp_per_stage": interp,
        "stages": ucfg.stages,
        "total": (2 * L + 2) * H * Wp + ucfg.stages * per_stage,
    }


def model_summary(ucfg: UnfoldConfig, H: int, W: int,
                  store: ParamStore | None = None) -> dict:
    if store is None:
        store = ParamStore(rng=np.random.default_rng(0))
        build_unfold_params(store, ucfg)
    fl = unfold_flops(ucfg, H, W)
    prox_params = count_params(store, "prox")
    return {
        "stages": ucfg.stages,
        "weight_sharing": ucfg.weight_sharing,
        "params_total": count_params(store),
        "params_prox": prox_params,
        "params_stage_scalars": count_params(store, "stage"),
        "flops_total": fl["total"],
        "flops_breakdown": fl,
        "input": (ucfg.prox.bands, H, W),
    }


def format_summary(s: dict) -> str:
    fl = s["flops_breakdown"]
    lines = [
        f"input cube          : {s['input'][0]} bands, {s['input'][1]}x{s['input'][2]}",
        f"stages              : {s['stages']} (weight sharing: {s['weight_sharing']})",
        f"parameters (total)  : {s['params_total']:,}",
        f"  denoiser registry : {s['params_prox']:,}",
        f"  stage scalars     : {s['params_stage_scalars']:,}",
        f"flops per recon     : {s['flops_total'] / 1e9:.4f} G",
        f"  init estimate     : {fl['init'] / 1e6:.3f} M",
        f"  bp step x{s['stages']}        : {fl['bp_per_stage'] / 1e6:.3f} M each",
        f"  denoiser x{s['stages']}       : {fl['prox_per_stage'] / 1e6:.3f} M each",
        f"  interpolation x{s['stages']}  : {fl['interp_per_stage'] / 1e6:.3f} M each",
    ]
    return "\n".join(lines)
