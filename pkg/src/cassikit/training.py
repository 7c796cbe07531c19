"""Training: trajectory supervision, Adam, cosine schedule, the toy loop.

Intermediate iterates are supervised against linear interpolants between
the initial estimate and the ground truth (both in shifted coordinates):

    T_k = (k/K) x_gt + (1 - k/K) x_0,       k = 1..K

weighted by alpha_k = 1 - exp(-c k / K), which rises with k so late stages
matter more.  The total objective is the final-stage reconstruction error
plus w_traj times that stage-wise sum.

The train() loop is deliberately plain: one process, seeded end to end,
fixed batch order per epoch permutation, CSV log with one row per epoch.
Aborts with diagnostics if the loss goes non-finite.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .cassi import (DispersionSpec, forward_measure, shift_cube,
                    shifted_mask_stack, unshift_cube)
from .denoiser import ProxConfig
from .fidelity import compute_AAt_diag
from .hsio import generate_mask, save_config_snapshot, write_csv
from .metrics import psnr, ssim
from .synthetic import SyntheticSceneSpec, make_synthetic_dataset
from .unfold import UnfoldConfig, build_unfold_params, init_estimate, run_t


@dataclass
class TrajectoryLossConfig:
    rate: float = 3.0          # exponential rate constant in the stage weights
    weight: float = 0.5        # w_traj multiplier on the stage-wise sum
    target_mode: str = "indi-linear"

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError("rate must be > 0")
        if self.weight < 0:
            raise ValueError("weight must be >= 0")
        if self.target_mode != "indi-linear":
            raise ValueError(f"unknown target mode {self.target_mode!r}")


@dataclass
class TrainConfig:
    # data
    seed: int = 0
    bands: int = 8
    size: int = 48
    train_scenes: int = 200
    val_scenes: int = 20
    endmembers: int = 4
    mask_density: float = 0.5
    step: int = 1
    noise_sigma: float = 0.0
    augment: bool = True
    dataset: str = "synthetic"   # synthetic | hsic-dir (user-supplied cubes)
    data_dir: str = ""           # for hsic-dir: holds train/*.hsic, val/*.hsic
    # model
    stages: int = 3
    weight_sharing: bool = True
    eta_init: float = 1e-2
    levels: int = 2
    base_channels: int = 16
    window: int = 8
    ffn_expand: int = 2
    attention_schedule: str = ""   # comma list, e.g. "spectral,spatial"; "" = default
    use_attention: bool = True
    use_freq_fusion: bool = True
    use_outer_skip: bool = True
    use_offset: bool = False
    # optimization
    epochs: int = 50
    batch: int = 4
    lr: float = 4e-4
    lr_min: float = 4e-6
    beta1: float = 0.9
    beta2: float = 0.999
    w_traj: float = 0.5
    traj_rate: float = 3.0
    final_loss: str = "mse"    # mse | charbonnier
    dtype: str = "f32"

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("adam betas must lie in (0, 1)")
        if self.final_loss not in ("mse", "charbonnier"):
            raise ValueError(f"unknown final loss {self.final_loss!r}")

    def prox_config(self) -> ProxConfig:
        sched = None
        if self.attention_schedule:
            sched = tuple(s.strip() for s in self.attention_schedule.split(","))
        return ProxConfig(bands=self.bands, levels=self.levels,
                          base_channels=self.base_channels, window=self.window,
                          ffn_expand=self.ffn_expand,
                          attention_schedule=sched,
                          use_attention=self.use_attention,
                          use_freq_fusion=self.use_freq_fusion,
                          use_outer_skip=self.use_outer_skip,
                          use_offset=self.use_offset,
                          stage_conditioning="bias" if self.weight_sharing else "none",
                          n_stages=self.stages)

    def unfold_config(self) -> UnfoldConfig:
        return UnfoldConfig(stages=self.stages, weight_sharing=self.weight_sharing,
                            eta_init=self.eta_init, prox=self.prox_config())

    def numpy_dtype(self):
        return np.float32 if self.dtype == "f32" else np.float64


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def trajectory_targets(x_gt: np.ndarray, x0: np.ndarray, K: int) -> list:
    """Linear interpolants T_1..T_K from x0 toward x_gt (T_K = x_gt)."""
    if x_gt.shape != x0.shape:
        raise ValueError(f"shape mismatch {x_gt.shape} vs {x0.shape}")
    return [(k / K) * x_gt + (1.0 - k / K) * x0 for k in range(1, K + 1)]


def stage_weight(k: int, K: int, c: float) -> float:
    """alpha_k = 1 - exp(-c k / K), increasing in k, in (0, 1)."""
    if c <= 0:
        raise ValueError("rate constant must be > 0")
    if not 1 <= k <= K:
        raise ValueError(f"stage {k} outside 1..{K}")
    return 1.0 - math.exp(-c * k / K)


def mse_t(a: Tensor, b) -> Tensor:
    bb = b if isinstance(b, Tensor) else Tensor(np.asarray(b, dtype=a.dtype))
    d = ad.sub(a, bb)
    return ad.reduce_mean(ad.mul(d, d))


def charbonnier_t(a: Tensor, b, eps: float = 1e-3) -> Tensor:
    bb = b if isinstance(b, Tensor) else Tensor(np.asarray(b, dtype=a.dtype))
    d = ad.sub(a, bb)
    return ad.reduce_mean(ad.sqrt(ad.mul(d, d) + eps * eps))


def trajectory_loss(states: list, targets: list, cfg: TrajectoryLossConfig) -> Tensor:
    """Sum over supervised stages of alpha_k * MSE(x_k, T_k).

    states is the full trajectory [x_0 .. x_K]; targets has length K and
    supervises x_1..x_K.
    """
    K = len(targets)
    if len(states) != K + 1:
        raise ValueError(f"trajectory has {len(states)} states, targets want {K + 1}")
    total = None
    for k in range(1, K + 1):
        term = ad.scalar_mul(mse_t(states[k], targets[k - 1]),
                             stage_weight(k, K, cfg.rate))
        total = term if total is None else ad.add(total, term)
    return total


def total_loss(states: list, x_gt, x0, cfg: TrajectoryLossConfig,
               final_mode: str = "mse"):
    """final reconstruction loss + w_traj * trajectory term.

    Returns (loss, final_term_value, traj_term_value); the scalar floats are
    detached monitoring values.
    """
    final_fn = mse_t if final_mode == "mse" else charbonnier_t
    final = final_fn(states[-1], x_gt)
    gt = np.asarray(x_gt.data if isinstance(x_gt, Tensor) else x_gt)
    x0d = np.asarray(x0.data if isinstance(x0, Tensor) else x0)
    K = len(states) - 1
    if cfg.weight > 0:
        targets = trajectory_targets(gt, x0d, K)
        traj = trajectory_loss(states, targets, cfg)
        loss = ad.add(final, ad.scalar_mul(traj, cfg.weight))
        return loss, float(final.data), float(traj.data)
    return final, float(final.data), 0.0


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

def adam_step(store: ParamStore, state: dict, lr: float,
              betas=(0.9, 0.999), eps: float = 1e-8) -> None:
    """In-place Adam with bias correction; missing grads are treated as 0
    (parameter unchanged on its first such step)."""
    b1, b2 = betas
    state["t"] = state.get("t", 0) + 1
    t = state["t"]
    for name, p in store.items():
        g = p.grad
        if g is None:
            continue
        m, v = state.get(name, (np.zeros_like(p.data), np.zeros_like(p.data)))
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * (g * g)
        state[name] = (m, v)
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        p.data = p.data - lr * mhat / (np.sqrt(vhat) + eps)


def cosine_lr(epoch: int, total: int, lr_max: float, lr_min: float) -> float:
    if total <= 0:
        return lr_max
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * epoch / total))


# ---------------------------------------------------------------------------
# the toy loop
# ---------------------------------------------------------------------------

def _load_cube_dir(path: str, bands: int, size: int) -> list:
    """User-supplied scenes: every .hsic cube in ``path``, shape-checked."""
    from .hsio import load_cube
    import glob
    files = sorted(glob.glob(os.path.join(path, "*.hsic")))
    if not files:
        raise FileNotFoundError(f"no .hsic cubes under {path}")
    cubes = []
    for f in files:
        c, _ = load_cube(f)
        if c.shape != (bands, size, size):
            raise ValueError(f"{f}: shape {c.shape}, config wants "
                             f"({bands}, {size}, {size})")
        cubes.append(c.astype(np.float64))
    return cubes


def _flip(cube: np.ndarray, fr: bool, fc: bool) -> np.ndarray:
    if fr:
        cube = cube[:, ::-1]
    if fc:
        cube = cube[:, :, ::-1]
    return np.ascontiguousarray(cube)


def _measure_batch(cubes, mask, spec, sigma, rng):
    ys = []
    for c in cubes:
        y = forward_measure(c, mask, spec)
        if sigma > 0:
            y = y + sigma * rng.standard_normal(y.shape)
        ys.append(y)
    return np.stack(ys)


def _validate(store, ucfg, val_y, val_cubes, mstack, diag, W, spec, dtype):
    """Batched validation pass: returns (final PSNR, final SSIM, per-stage PSNR)."""
    K = ucfg.stages
    n = len(val_cubes)
    stage_psnrs = np.zeros((n, K + 1))
    final_ssim = np.zeros(n)
    mst, dg = Tensor(mstack.astype(dtype)), Tensor(diag.astype(dtype))
    bs = 4
    with ad.no_grad():
        for s0 in range(0, n, bs):
            yb = Tensor(val_y[s0:s0 + bs].astype(dtype))
            _, states, _ = run_t(yb, mst, dg, store, ucfg)
            for j in range(yb.shape[0]):
                gt = val_cubes[s0 + j]
                for k, st in enumerate(states):
                    rec = unshift_cube(st.data[j].astype(np.float64), W, spec)
                    stage_psnrs[s0 + j, k] = psnr(rec, gt)
                    if k == K:
                        final_ssim[s0 + j] = ssim(rec, gt)
    return (float(stage_psnrs[:, -1].mean()), float(final_ssim.mean()),
            stage_psnrs.mean(axis=0), np.median(stage_psnrs, axis=0))


def train(cfg: TrainConfig, out_dir: str) -> dict:
    """Run the toy training loop; writes checkpoint/, log.csv, config.ini.

    Returns a summary dict (final/init PSNR, per-stage medians, timing).
    """
    os.makedirs(out_dir, exist_ok=True)
    t_start = time.time()
    spec = DispersionSpec(step=cfg.step)
    dtype = cfg.numpy_dtype()

    mask = generate_mask(cfg.size, cfg.size, cfg.mask_density, seed=cfg.seed + 101)
    if cfg.dataset == "synthetic":
        scene_spec = SyntheticSceneSpec(size=cfg.size, bands=cfg.bands,
                                        n_endmembers=cfg.endmembers, seed=cfg.seed)
        train_cubes = make_synthetic_dataset(scene_spec, cfg.train_scenes, stream=0)
        val_cubes = make_synthetic_dataset(scene_spec, cfg.val_scenes, stream=1)
    elif cfg.dataset == "hsic-dir":
        train_cubes = _load_cube_dir(os.path.join(cfg.data_dir, "train"),
                                     cfg.bands, cfg.size)
        val_cubes = _load_cube_dir(os.path.join(cfg.data_dir, "val"),
                                   cfg.bands, cfg.size)
    else:
        raise ValueError(f"unknown dataset kind {cfg.dataset!r}")

    mstack = shifted_mask_stack(mask, cfg.bands, spec)
    diag = compute_AAt_diag(mask, cfg.bands, spec).values
    W = cfg.size

    noise_rng = np.random.default_rng([cfg.seed, 7])
    val_y = _measure_batch(val_cubes, mask, spec, cfg.noise_sigma,
                           np.random.default_rng([cfg.seed, 8]))

    ucfg = cfg.unfold_config()
    store = ParamStore(rng=np.random.default_rng([cfg.seed, 2]), dtype=dtype)
    build_unfold_params(store, ucfg)

    lcfg = TrajectoryLossConfig(rate=cfg.traj_rate, weight=cfg.w_traj)
    adam_state: dict = {}
    order_rng = np.random.default_rng([cfg.seed, 3])
    aug_rng = np.random.default_rng([cfg.seed, 4])

    # reference point: quality of the raw initial estimate on validation
    init_psnrs = []
    for i, c in enumerate(val_cubes):
        x0 = init_estimate(val_y[i], mstack, diag)
        init_psnrs.append(psnr(unshift_cube(x0, W, spec), c))
    init_psnr = float(np.mean(init_psnrs))

    mst_t = Tensor(mstack.astype(dtype))
    diag_t = Tensor(diag.astype(dtype))
    header = (["epoch", "lr", "train_loss", "traj_loss", "val_psnr", "val_ssim"]
              + [f"val_psnr_k{k}" for k in range(1, cfg.stages + 1)])
    rows = []
    n = len(train_cubes)
    steps = max(n // cfg.batch, 1)
    last = {}
    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg.epochs, cfg.lr, cfg.lr_min)
        perm = order_rng.permutation(n)
        ep_loss, ep_traj = 0.0, 0.0
        for s in range(steps):
            idx = perm[s * cfg.batch:(s + 1) * cfg.batch]
            cubes = []
            for i in idx:
                c = train_cubes[i]
                if cfg.augment:
                    fr, fc = aug_rng.random(2) < 0.5
                    c = _flip(c, bool(fr), bool(fc))
                cubes.append(c)
            y = _measure_batch(cubes, mask, spec, cfg.noise_sigma, noise_rng)
            xs_gt = np.stack([shift_cube(c, spec) for c in cubes]).astype(dtype)
            x0 = (mstack[None] * (y / (diag + 1e-8))[:, None]).astype(dtype)
            yt = Tensor(y.astype(dtype))
            x0_t = Tensor(x0)
            _, states, _ = run_t(yt, mst_t, diag_t, store, ucfg, x0=x0_t)
            loss, fin_v, traj_v = total_loss(states, xs_gt, x0, lcfg,
                                             cfg.final_loss)
            if not np.isfinite(loss.data):
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch} step {s}: "
                    f"final={fin_v} traj={traj_v}")
            store.zero_grad()
            ad.backward(loss)
            adam_step(store, adam_state, lr, (cfg.beta1, cfg.beta2))
            ep_loss += float(loss.data)
            ep_traj += traj_v
        val_psnr, val_ssim, stage_mean, stage_median = _validate(
            store, ucfg, val_y, val_cubes, mstack, diag, W, spec, dtype)
        row = ([epoch, f"{lr:.6e}", f"{ep_loss / steps:.6e}",
                f"{ep_traj / steps:.6e}", f"{val_psnr:.4f}", f"{val_ssim:.5f}"]
               + [f"{stage_mean[k]:.4f}" for k in range(1, cfg.stages + 1)])
        rows.append(row)
        last = {"val_psnr": val_psnr, "val_ssim": val_ssim,
                "stage_mean": stage_mean.tolist(),
                "stage_median": stage_median.tolist()}

    ckpt = os.path.join(out_dir, "checkpoint")
    store.save(ckpt)
    write_csv(os.path.join(out_dir, "log.csv"), header, rows)
    save_config_snapshot(os.path.join(out_dir, "config.ini"),
                         {"train": asdict(cfg)})
    summary = {
        "init_psnr": init_psnr,
        "final_val_psnr": last["val_psnr"],
        "final_val_ssim": last["val_ssim"],
        "stage_mean_psnr": last["stage_mean"],
        "stage_median_psnr": last["stage_median"],
        "epochs": cfg.epochs,
        "seconds": time.time() - t_start,
        "params": store.count(),
        "checkpoint": ckpt,
    }
    return summary


def load_train_config(cp) -> TrainConfig:
    """Rebuild a TrainConfig from a config.ini snapshot (or user INI)."""
    sec = cp["train"]
    cfg = TrainConfig()
    for name in TrainConfig.__dataclass_fields__:
        if name not in sec:
            continue
        raw = sec[name]
        cur = getattr(cfg, name)
        if isinstance(cur, bool):
            setattr(cfg, name, raw.strip().lower() in ("1", "true", "yes", "on"))
        elif isinstance(cur, int):
            setattr(cfg, name, int(raw))
        elif isinstance(cur, float):
            setattr(cfg, name, float(raw))
        else:
            setattr(cfg, name, raw)
    cfg.__post_init__()
    return cfg
