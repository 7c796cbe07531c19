"""Timing comparison: compiled dynamic-filter kernels vs the numpy fallback.

Run as ``python benchmarks/bench_kernels.py``.  Exercises the two hot calls
(forward filtering and its backward pass) at the shapes the denoiser actually
uses, on both backends, and prints a small table with the speedup.

The numbers move with BLAS threading; for stable results pin threads first
(OMP_NUM_THREADS=1 etc.), which is also how the test suite and the CLI run.
"""

import argparse
import time

import numpy as np

from cassikit.kernels import numpy_backend

try:
    from cassikit.kernels import _dynfilter as ext
except ImportError:
    ext = None


def bench(fn, *args, repeats=5, warmup=1):
    for _ in range(warmup):
        fn(*args)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def ext_forward(x_pad, ks, k):
    B, _, H, W = ks.shape
    out = np.zeros((B, x_pad.shape[1], H, W), dtype=x_pad.dtype)
    ext.forward(x_pad, ks, out, k)
    return out


def ext_backward(x_pad, ks, g, k):
    gx = np.zeros_like(x_pad)
    gk = np.zeros_like(ks)
    ext.backward(x_pad, ks, g, gx, gk, k)
    return gx, gk


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--dtype", choices=["f32", "f64"], default="f32")
    args = ap.parse_args()
    dtype = np.float32 if args.dtype == "f32" else np.float64

    if ext is None:
        print("compiled extension not available; build the package first")
        return

    # (B, C, H, W, k): skip-fusion shapes for a 48x48 and a 256x256 run
    cases = [
        (1, 24, 24, 27, 3),
        (4, 24, 24, 27, 3),
        (1, 28, 128, 155, 3),
        (1, 56, 256, 310, 3),
    ]
    rng = np.random.default_rng(0)
    print(f"{'shape (B,C,H,W) k':<26s} {'numpy':>10s} {'cython':>10s} "
          f"{'speedup':>8s}  call")
    for B, C, H, W, k in cases:
        x_pad = rng.standard_normal((B, C, H + k - 1, W + k - 1)).astype(dtype)
        ks = rng.standard_normal((B, k * k, H, W)).astype(dtype)
        g = rng.standard_normal((B, C, H, W)).astype(dtype)

        tn = bench(numpy_backend.dynfilter_forward, x_pad, ks, k,
                   repeats=args.repeats)
        tc = bench(ext_forward, x_pad, ks, k, repeats=args.repeats)
        label = f"({B},{C},{H},{W}) {k}"
        print(f"{label:<26s} {tn * 1e3:>8.2f}ms {tc * 1e3:>8.2f}ms "
              f"{tn / tc:>7.2f}x  forward")

        tn = bench(numpy_backend.dynfilter_backward, x_pad, ks, g, k,
                   repeats=args.repeats)
        tc = bench(ext_backward, x_pad, ks, g, k, repeats=args.repeats)
        print(f"{'':<26s} {tn * 1e3:>8.2f}ms {tc * 1e3:>8.2f}ms "
              f"{tn / tc:>7.2f}x  backward")


if __name__ == "__main__":
    main()
