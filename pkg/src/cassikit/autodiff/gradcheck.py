"""Finite-difference validation of the tape's vector-Jacobian products.

Everything runs in float64.  The scheme is the usual one: contract the op
output with a fixed random cotangent R so the quantity under test is the
scalar  s = sum(f(x) * R),  differentiate s by central differences with
step h, and compare against the tape gradient coordinate by coordinate.

Reported error per coordinate is

    |ad - fd| / max(|ad|, |fd|, floor)

The floor keeps dead coordinates (both gradients ~ roundoff) from turning
0/0 noise into a failure; with h = 1e-5 the central-difference noise is
around 1e-9 for O(1) values, so floor 1e-3 bounds the spurious error at
about 1e-6, below normal tolerances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T


@dataclass
class GradReport:
    step: float
    floor: float
    entries: list = field(default_factory=list)  # (label, max_err, n_checked)

    @property
    def max_error(self) -> float:
        return max((e[1] for e in self.entries), default=0.0)

    @property
    def worst(self):
        return max(self.entries, key=lambda e: e[1]) if self.entries else None

    def ok(self, tol: float) -> bool:
        return self.max_error <= tol

    def lines(self):
        for label, err, n in self.entries:
            yield f"{label}: max_rel_err={err:.3e} ({n} coords)"


def _coords(shape, max_coords, rng):
    total = int(np.prod(shape)) if shape else 1
    if max_coords is None or total <= max_coords:
        return [np.unravel_index(k, shape) if shape else () for k in range(total)]
    picks = rng.choice(total, size=max_coords, replace=False)
    return [np.unravel_index(int(k), shape) if shape else () for k in picks]


def check_function(fn, arrays, step: float = 1e-5, floor: float = 1e-3,
                   max_coords=None, seed: int = 0,
                   labels=None) -> GradReport:
    """Compare tape gradients of ``fn`` against central differences.

    fn maps len(arrays) Tensors to one output Tensor (any shape); arrays are
    float64 numpy inputs.  Each input gets a gradient check over all of its
    coordinates (or a random subset of max_coords).
    """
    rng = np.random.default_rng(seed)
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    tensors = [T.Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = fn(*tensors)
    R = rng.standard_normal(out.shape) if out.shape else 1.0

    def scalar(vals):
        with T.no_grad():
            y = fn(*[T.Tensor(v) for v in vals])
        return float(np.sum(y.data * R))

    loss = T.reduce_sum(out * T.Tensor(np.asarray(R, dtype=np.float64)))
    T.backward(loss)

    report = GradReport(step=step, floor=floor)
    for i, (a, t) in enumerate(zip(arrays, tensors)):
        label = labels[i] if labels else f"input{i}"
        ad = t.grad if t.grad is not None else np.zeros_like(a)
        ad = np.asarray(ad)
        worst = 0.0
        coords = _coords(a.shape, max_coords, rng)
        for c in coords:
            bumped = [v.copy() for v in arrays]
            bumped[i][c] += step
            fp = scalar(bumped)
            bumped[i][c] -= 2 * step
            fm = scalar(bumped)
            fd = (fp - fm) / (2 * step)
            adc = float(ad[c]) if a.shape else float(ad)
            err = abs(adc - fd) / max(abs(adc), abs(fd), floor)
            worst = max(worst, err)
        report.entries.append((label, worst, len(coords)))
    return report


def standard_op_suite(seed: int = 0):
    """(name, fn, input arrays) triples covering the whole op vocabulary.

    Inputs are small and seeded; callers run check_function on each entry.
    Domain-restricted ops get inputs away from their kinks (positive values
    for sqrt, offsets clear of the resampling clamp boundary).
    """
    rng = np.random.default_rng(seed)
    r = rng.standard_normal
    suite = [
        ("add", lambda a, b: T.add(a, b), [r((3, 4)), r((3, 4))]),
        ("add_broadcast", lambda a, b: T.add(a, b), [r((2, 3, 4)), r((4,))]),
        ("sub", lambda a, b: T.sub(a, b), [r((3, 4)), r((3, 4))]),
        ("mul", lambda a, b: T.mul(a, b), [r((3, 4)), r((3, 4))]),
        ("mul_broadcast", lambda a, b: T.mul(a, b), [r((2, 3, 4)), r((3, 1))]),
        ("div", lambda a, b: T.div(a, b), [r((3, 4)), r((3, 4)) + 3.0]),
        ("scalar_mul", lambda a: T.scalar_mul(a, -1.7), [r((3, 4))]),
        ("sqrt", lambda a: T.sqrt(a), [np.abs(r((3, 4))) + 0.5]),
        ("sigmoid", lambda a: T.sigmoid(a), [3.0 * r((3, 4))]),
        ("softplus", lambda a: T.softplus(a), [3.0 * r((3, 4))]),
        ("gelu", lambda a: T.gelu(a), [2.0 * r((3, 4))]),
        ("reshape", lambda a: T.reshape(a, (4, 6)), [r((2, 3, 4))]),
        ("transpose", lambda a: T.transpose(a, (2, 0, 1)), [r((2, 3, 4))]),
        ("concat", lambda a, b: T.concat([a, b], axis=1), [r((2, 3)), r((2, 2))]),
        ("slice", lambda a: T.slice_(a, (slice(1, 3), slice(0, 2))), [r((4, 5))]),
        ("pad_constant", lambda a: T.pad(a, ((1, 2), (0, 1)), "constant"), [r((3, 4))]),
        ("pad_reflect", lambda a: T.pad(a, ((2, 3), (1, 4)), "reflect"), [r((4, 5))]),
        ("matmul", lambda a, b: T.matmul(a, b), [r((3, 4)), r((4, 2))]),
        ("matmul_batched", lambda a, b: T.matmul(a, b), [r((2, 3, 4)), r((2, 4, 2))]),
        ("conv1x1", lambda x, w, b: T.conv1x1(x, w, b),
         [r((2, 3, 4, 4)), r((5, 3)), r((5,))]),
        ("layernorm", lambda a: T.layernorm(a), [r((3, 4, 6))]),
        ("softmax", lambda a: T.softmax(a), [2.0 * r((3, 5))]),
        ("sum_all", lambda a: T.reduce_sum(a), [r((3, 4))]),
        ("sum_axis", lambda a: T.reduce_sum(a, axis=1, keepdims=True), [r((2, 3, 4))]),
        ("mean_all", lambda a: T.reduce_mean(a), [r((3, 4))]),
        ("mean_axis", lambda a: T.reduce_mean(a, axis=2), [r((2, 3, 4))]),
        ("avg_pool2d", lambda a: T.avg_pool2d(a), [r((2, 3, 4, 6))]),
        ("upsample_nearest2d", lambda a: T.upsample_nearest2d(a), [r((2, 3, 3, 4))]),
        ("upsample_bilinear2d", lambda a: T.upsample_bilinear2d(a), [r((2, 3, 3, 4))]),
        ("dynamic_filter", lambda x, k: T.dynamic_filter(x, k, 3),
         [r((1, 2, 6, 6)), r((1, 9, 4, 4))]),
    ]
    off = (rng.uniform(0.05, 0.45, (1, 2, 4, 5)) *
           rng.choice([-1.0, 1.0], (1, 2, 4, 5)))
    suite.append(("grid_resample",
                  lambda x, o: T.grid_resample(x, o), [r((1, 2, 4, 5)), off]))
    return suite


def check_params(loss_fn, named_tensors, step: float = 1e-5,
                 floor: float = 1e-3, max_coords: int = 4,
                 seed: int = 0) -> GradReport:
    """Gradient-check a scalar loss against a set of live parameters.

    loss_fn() must rebuild the graph from the current parameter values each
    call (finite differences mutate them in place and restore afterwards).
    Coordinates are subsampled per parameter to keep the cost linear in the
    number of tensors rather than the number of scalars.
    """
    rng = np.random.default_rng(seed)
    for _, t in named_tensors:
        t.grad = None
    loss = loss_fn()
    if loss.size != 1:
        raise ValueError("loss_fn must return a scalar")
    T.backward(loss)

    report = GradReport(step=step, floor=floor)
    for name, t in named_tensors:
        ad = t.grad if t.grad is not None else np.zeros_like(t.data)
        worst = 0.0
        coords = _coords(t.data.shape, max_coords, rng)
        for c in coords:
            orig = float(t.data[c]) if t.data.shape else float(t.data)
            t.data[c] = orig + step
            with T.no_grad():
                fp = float(loss_fn().data)
            t.data[c] = orig - step
            with T.no_grad():
                fm = float(loss_fn().data)
            t.data[c] = orig
            fd = (fp - fm) / (2 * step)
            adc = float(ad[c]) if t.data.shape else float(ad)
            err = abs(adc - fd) / max(abs(adc), abs(fd), floor)
            worst = max(worst, err)
        report.entries.append((name, worst, len(coords)))
    return report
