"""Ablation harness: retrain with one component removed at a time.

Run as ``python -m cassikit.ablation --out DIR``.  Each row of the emitted
CSV is an independent toy-scale training run with one toggle flipped:
windowed attention, the frequency-aware skip fusion, trajectory supervision,
the outer input-to-output residual, or cross-stage weight sharing.

The defaults are deliberately tiny so the whole grid finishes on a laptop
CPU; pass --config / --epochs / --scenes to scale up.  Numbers here rank
components at desk scale only, they are not comparable to any full-scale
benchmark results.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys


VARIANTS = [
    ("full", {}),
    ("no_attention", {"use_attention": False}),
    ("no_freq_fusion", {"use_freq_fusion": False}),
    ("no_trajectory_loss", {"w_traj": 0.0}),
    ("no_outer_skip", {"use_outer_skip": False}),
    ("no_weight_sharing", {"weight_sharing": False}),
]


def run_grid(base_cfg, out_dir: str, names=None) -> list:
    from .hsio import write_csv
    from .training import train

    chosen = [(n, o) for n, o in VARIANTS if names is None or n in names]
    rows = []
    for name, overrides in chosen:
        cfg = dataclasses.replace(base_cfg, **overrides)
        summary = train(cfg, os.path.join(out_dir, name))
        rows.append([
            name,
            int(cfg.use_attention), int(cfg.use_freq_fusion),
            int(cfg.w_traj > 0), int(cfg.use_outer_skip),
            int(cfg.weight_sharing),
            summary["params"],
            f"{summary['init_psnr']:.4f}",
            f"{summary['final_val_psnr']:.4f}",
            f"{summary['final_val_ssim']:.5f}",
            f"{summary['seconds']:.1f}",
        ])
        print(f"{name:<20s} psnr {summary['final_val_psnr']:.3f} dB "
              f"(init {summary['init_psnr']:.3f}) in {summary['seconds']:.0f}s")
    header = ["variant", "attention", "freq_fusion", "trajectory_loss",
              "outer_skip", "weight_sharing", "params", "init_psnr",
              "final_val_psnr", "final_val_ssim", "seconds"]
    write_csv(os.path.join(out_dir, "ablation.csv"), header, rows)
    return rows


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="python -m cassikit.ablation",
                                 description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True)
    ap.add_argument("--config", default=None,
                    help="train INI to use as the base (defaults to a tiny grid)")
    ap.add_argument("--epochs", type=int, default=None)
    ap.add_argument("--scenes", type=int, default=None)
    ap.add_argument("--val-scenes", type=int, default=None)
    ap.add_argument("--size", type=int, default=None)
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--variants", default=None,
                    help="comma-separated subset of variant names")
    args = ap.parse_args(argv)

    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, "1")

    from .hsio import load_config
    from .training import TrainConfig, load_train_config

    if args.config:
        base = load_train_config(load_config(args.config))
    else:
        base = TrainConfig(size=32, train_scenes=48, val_scenes=8, epochs=6,
                           batch=4)
    if args.epochs is not None:
        base.epochs = args.epochs
    if args.scenes is not None:
        base.train_scenes = args.scenes
    if args.val_scenes is not None:
        base.val_scenes = args.val_scenes
    if args.size is not None:
        base.size = args.size
    if args.seed is not None:
        base.seed = args.seed

    os.makedirs(args.out, exist_ok=True)
    names = set(args.variants.split(",")) if args.variants else None
    run_grid(base, args.out, names)
    print(f"wrote {os.path.join(args.out, 'ablation.csv')}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
