"""U-shaped spatial-spectral denoiser used as the learned prior.

Feature maps are (B, C, H, W).  Each level runs one pre-norm transformer
block on non-overlapping window tokens: channel-token attention at the
shallow levels, where spectra need mixing and token count is high, and
low-rank spatial attention at the deepest level, where resolution is small.
Downsampling is 2x average pooling + channel expansion; skips re-enter
through the frequency-aware combine in ``fusion`` (or plain align-up-add
when that is disabled).

Spatial extents are reflect-padded up to a multiple of 2^(levels-1)*window
so every level tiles exactly, and the output is cropped back.  The output
head starts at zero, so with the outer residual connection the network is
exactly the identity at initialization.

For stage-shared weights a per-stage channel bias after the input
projection tells the network which unfolding stage it is running in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import autodiff as ad
from . import fusion
from .autodiff import Tensor


@dataclass
class ProxConfig:
    bands: int
    levels: int = 3
    base_channels: int = 16
    window: int = 8
    ffn_expand: int = 2
    attention_schedule: tuple | None = None  # per level: spectral | spatial
    use_attention: bool = True  # off: blocks keep only their FFN sublayer
    use_freq_fusion: bool = True
    use_outer_skip: bool = True
    use_offset: bool = False
    stage_conditioning: str = "bias"  # bias | none
    n_stages: int = 1
    lpf_ksize: int = 3

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.stage_conditioning not in ("bias", "none"):
            raise ValueError(f"unknown stage conditioning {self.stage_conditioning!r}")
        sched = self.schedule()
        if len(sched) != self.levels or any(s not in ("spectral", "spatial") for s in sched):
            raise ValueError(f"bad attention schedule {sched}")

    def schedule(self) -> tuple:
        if self.attention_schedule is not None:
            return tuple(self.attention_schedule)
        return ("spectral",) * (self.levels - 1) + ("spatial",)

    def channels(self, level: int) -> int:
        return self.base_channels * (2 ** level)

    def lowrank_dim(self, c: int) -> int:
        # max(C/4, 8), capped below C so the rank reduction stays real
        return min(max(c // 4, 8), max(c // 2, 1))

    def pad_multiple(self) -> int:
        return (2 ** (self.levels - 1)) * self.window


# ---------------------------------------------------------------------------
# token plumbing
# ---------------------------------------------------------------------------

def window_partition(x: Tensor, w: int) -> Tensor:
    """(B, C, H, W) -> (B*nh*nw, w*w, C) non-overlapping window tokens."""
    B, C, H, W = x.shape
    if H % w or W % w:
        raise ValueError(f"extents {H}x{W} not tiled by window {w}")
    nh, nw = H // w, W // w
    t = ad.reshape(x, (B, C, nh, w, nw, w))
    t = ad.transpose(t, (0, 2, 4, 3, 5, 1))
    return ad.reshape(t, (B * nh * nw, w * w, C))


def window_merge(t: Tensor, B: int, C: int, H: int, W: int, w: int) -> Tensor:
    """Inverse of window_partition."""
    nh, nw = H // w, W // w
    x = ad.reshape(t, (B, nh, nw, w, w, C))
    x = ad.transpose(x, (0, 5, 1, 3, 2, 4))
    return ad.reshape(x, (B, C, H, W))


def token_linear(t: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return ad.add(ad.matmul(t, w), b)


def layernorm_affine(t: Tensor, g: Tensor, b: Tensor) -> Tensor:
    return ad.add(ad.mul(ad.layernorm(t), g), b)


# ---------------------------------------------------------------------------
# attention flavors (tokens (N, T, C))
# ---------------------------------------------------------------------------

def spectral_attention(tokens, wq, bq, wk, bk, wv, bv, wo, bo,
                       return_attn: bool = False):
    """Channel-token attention: the C x C map Softmax(Q^T K / sqrt(T))."""
    N, T, C = tokens.shape
    q = token_linear(tokens, wq, bq)
    k = token_linear(tokens, wk, bk)
    v = token_linear(tokens, wv, bv)
    logits = ad.scalar_mul(ad.matmul(ad.transpose(q, (0, 2, 1)), k),
                           1.0 / math.sqrt(T))
    attn = ad.softmax(logits)
    y = ad.matmul(attn, ad.transpose(v, (0, 2, 1)))
    out = token_linear(ad.transpose(y, (0, 2, 1)), wo, bo)
    return (out, attn) if return_attn else out


def spatial_lowrank_attention(tokens, wq, bq, wk, bk, wv, bv, wo, bo,
                              return_attn: bool = False):
    """Token-token attention with rank-reduced queries/keys:
    Softmax(Q K^T / sqrt(C')) over T x T."""
    cq = wq.shape[1]
    q = token_linear(tokens, wq, bq)
    k = token_linear(tokens, wk, bk)
    v = token_linear(tokens, wv, bv)
    logits = ad.scalar_mul(ad.matmul(q, ad.transpose(k, (0, 2, 1))),
                           1.0 / math.sqrt(cq))
    attn = ad.softmax(logits)
    out = token_linear(ad.matmul(attn, v), wo, bo)
    return (out, attn) if return_attn else out


def attention_block(feat: Tensor, store, prefix: str, kind: str,
                    window: int, ffn_expand: int,
                    use_attention: bool = True) -> Tensor:
    """Pre-norm block: attention + residual, then FFN + residual.

    With use_attention off (ablation) the attention sublayer is dropped and
    only the normalized FFN path remains.
    """
    B, C, H, W = feat.shape
    tokens = window_partition(feat, window)
    if use_attention:
        h = layernorm_affine(tokens, store[f"{prefix}ln1.g"], store[f"{prefix}ln1.b"])
        attn_fn = spectral_attention if kind == "spectral" else spatial_lowrank_attention
        a = attn_fn(h,
                    store[f"{prefix}attn.wq"], store[f"{prefix}attn.bq"],
                    store[f"{prefix}attn.wk"], store[f"{prefix}attn.bk"],
                    store[f"{prefix}attn.wv"], store[f"{prefix}attn.bv"],
                    store[f"{prefix}attn.wo"], store[f"{prefix}attn.bo"])
        tokens = ad.add(tokens, a)
    h = layernorm_affine(tokens, store[f"{prefix}ln2.g"], store[f"{prefix}ln2.b"])
    f = token_linear(ad.gelu(token_linear(h, store[f"{prefix}ffn.w1"],
                                          store[f"{prefix}ffn.b1"])),
                     store[f"{prefix}ffn.w2"], store[f"{prefix}ffn.b2"])
    tokens = ad.add(tokens, f)
    return window_merge(tokens, B, C, H, W, window)


# ---------------------------------------------------------------------------
# parameter construction
# ---------------------------------------------------------------------------

def _build_block(store, prefix: str, c: int, kind: str, cfg: ProxConfig) -> None:
    dq = c if kind == "spectral" else cfg.lowrank_dim(c)
    s = 1.0 / math.sqrt(c)
    if cfg.use_attention:
        store.full(f"{prefix}ln1.g", (c,), 1.0)
        store.zeros(f"{prefix}ln1.b", (c,))
        store.randn(f"{prefix}attn.wq", (c, dq), scale=s)
        store.zeros(f"{prefix}attn.bq", (dq,))
        store.randn(f"{prefix}attn.wk", (c, dq), scale=s)
        store.zeros(f"{prefix}attn.bk", (dq,))
        store.randn(f"{prefix}attn.wv", (c, c), scale=s)
        store.zeros(f"{prefix}attn.bv", (c,))
        store.randn(f"{prefix}attn.wo", (c, c), scale=s)
        store.zeros(f"{prefix}attn.bo", (c,))
    store.full(f"{prefix}ln2.g", (c,), 1.0)
    store.zeros(f"{prefix}ln2.b", (c,))
    e = cfg.ffn_expand * c
    store.randn(f"{prefix}ffn.w1", (c, e), scale=s)
    store.zeros(f"{prefix}ffn.b1", (e,))
    store.randn(f"{prefix}ffn.w2", (e, c), scale=1.0 / math.sqrt(e))
    store.zeros(f"{prefix}ffn.b2", (c,))


def build_prox_params(store, prefix: str, cfg: ProxConfig) -> None:
    """Register every denoiser tensor under ``prefix`` in the store."""
    c0, L = cfg.base_channels, cfg.bands
    sched = cfg.schedule()
    store.randn(f"{prefix}in_proj.w", (c0, L), scale=1.0 / math.sqrt(L))
    store.zeros(f"{prefix}in_proj.b", (c0,))
    if cfg.stage_conditioning == "bias":
        store.zeros(f"{prefix}stage_bias", (max(cfg.n_stages, 1), c0))
    for lvl in range(cfg.levels):
        c = cfg.channels(lvl)
        _build_block(store, f"{prefix}enc{lvl}.", c, sched[lvl], cfg)
        if lvl < cfg.levels - 1:
            cn = cfg.channels(lvl + 1)
            store.randn(f"{prefix}down{lvl}.w", (cn, c), scale=1.0 / math.sqrt(c))
            store.zeros(f"{prefix}down{lvl}.b", (cn,))
    for lvl in range(cfg.levels - 2, -1, -1):
        c = cfg.channels(lvl)
        fusion.build_fusion_params(store, f"{prefix}fuse{lvl}.", c,
                                   cfg.channels(lvl + 1), cfg.lpf_ksize,
                                   cfg.use_offset)
        _build_block(store, f"{prefix}dec{lvl}.", c, sched[lvl], cfg)
    store.zeros(f"{prefix}out_head.w", (L, c0))
    store.zeros(f"{prefix}out_head.b", (L,))


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------

def prox_forward(x: Tensor, stage_index: int, store, prefix: str,
                 cfg: ProxConfig) -> Tensor:
    """Denoise a shifted-cube batch (B, bands, H, W); shape-preserving."""
    B, L, H, W = x.shape
    if L != cfg.bands:
        raise ValueError(f"input has {L} bands, config says {cfg.bands}")
    m = cfg.pad_multiple()
    ph, pw = (-H) % m, (-W) % m
    feat_in = x
    if ph or pw:
        feat_in = ad.pad(x, ((0, 0), (0, 0), (0, ph), (0, pw)), mode="reflect")
    feat = ad.conv1x1(feat_in, store[f"{prefix}in_proj.w"],
                      store[f"{prefix}in_proj.b"])
    if cfg.stage_conditioning == "bias":
        sb = ad.slice_(store[f"{prefix}stage_bias"],
                       (slice(stage_index, stage_index + 1), slice(None)))
        feat = ad.add(feat, ad.reshape(sb, (1, cfg.base_channels, 1, 1)))
    sched = cfg.schedule()
    skips = []
    for lvl in range(cfg.levels):
        feat = attention_block(feat, store, f"{prefix}enc{lvl}.", sched[lvl],
                               cfg.window, cfg.ffn_expand, cfg.use_attention)
        if lvl < cfg.levels - 1:
            skips.append(feat)
            feat = ad.conv1x1(ad.avg_pool2d(feat),
                              store[f"{prefix}down{lvl}.w"],
                              store[f"{prefix}down{lvl}.b"])
    for lvl in range(cfg.levels - 2, -1, -1):
        feat = fusion.fuse_skip(skips[lvl], feat, store, f"{prefix}fuse{lvl}.",
                                use_fusion=cfg.use_freq_fusion,
                                use_offset=cfg.use_offset, ksize=cfg.lpf_ksize)
        feat = attention_block(feat, store, f"{prefix}dec{lvl}.", sched[lvl],
                               cfg.window, cfg.ffn_expand, cfg.use_attention)
    out = ad.conv1x1(feat, store[f"{prefix}out_head.w"],
                     store[f"{prefix}out_head.b"])
    if ph or pw:
        out = ad.slice_(out, (slice(None), slice(None), slice(0, H), slice(0, W)))
    if cfg.use_outer_skip:
        out = ad.add(x, out)
    return out
