"""Minimal reverse-mode autodiff over numpy arrays.

Define-by-run tape: every operation returns a new ``Tensor`` whose
``_parents`` / ``_backward`` fields record how to push a cotangent back to
its inputs.  ``backward(loss)`` walks the tape once in reverse topological
order.  The op vocabulary is fixed and small (exactly what the
reconstruction network needs); every op's vector-Jacobian rule is covered
by the finite-difference suite in ``gradcheck``.

Conventions:
  * feature maps are NCHW, token matrices are (batch, tokens, channels)
  * float64 for tests/grad checks, float32 for training
  * no in-place mutation of any tensor that participates in a graph
  * every op validates that its output is finite (see ``set_check_finite``)
"""

from __future__ import annotations

import contextlib
import math

import numpy as np
from scipy.special import erf

_GRAD_ENABLED = True
_CHECK_FINITE = True

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)

LAYERNORM_EPS = 1e-6


class NonFiniteError(FloatingPointError):
    """An op produced NaN/Inf; message names the offending op."""


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (pure forward evaluation)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def set_check_finite(flag: bool) -> bool:
    """Toggle per-op finiteness validation; returns the previous setting."""
    global _CHECK_FINITE
    prev = _CHECK_FINITE
    _CHECK_FINITE = bool(flag)
    return prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.op = "leaf"
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op!r}, grad={self.requires_grad})"

    # arithmetic sugar; scalars are promoted to constants
    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    def __radd__(self, other):
        return add(_as_tensor(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self.dtype))

    def __rmul__(self, other):
        return mul(_as_tensor(other, self.dtype), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other, self.dtype))

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, op, parents, backward) -> Tensor:
    if _CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite value produced by op '{op}'")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def bw(g, grads):
        grads[0] = _unbroadcast(g, a.shape)
        grads[1] = _unbroadcast(g, b.shape)

    return _make(data, "add", (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def bw(g, grads):
        grads[0] = _unbroadcast(g, a.shape)
        grads[1] = _unbroadcast(-g, b.shape)

    return _make(data, "sub", (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def bw(g, grads):
        grads[0] = _unbroadcast(g * b.data, a.shape)
        grads[1] = _unbroadcast(g * a.data, b.shape)

    return _make(data, "mul", (a, b), bw)


def div(a: Tensor, b: Tensor) -> Tensor:
    # invalid values surface as NonFiniteError, not as a numpy warning
    with np.errstate(divide="ignore", invalid="ignore"):
        data = a.data / b.data

    def bw(g, grads):
        grads[0] = _unbroadcast(g / b.data, a.shape)
        grads[1] = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)

    return _make(data, "div", (a, b), bw)


def scalar_mul(a: Tensor, s: float) -> Tensor:
    s = float(s)
    data = a.data * s

    def bw(g, grads):
        grads[0] = g * s

    return _make(data, "scalar_mul", (a,), bw)


def sqrt(a: Tensor) -> Tensor:
    with np.errstate(invalid="ignore"):
        data = np.sqrt(a.data)

    def bw(g, grads):
        grads[0] = g * (0.5 / data)

    return _make(data, "sqrt", (a,), bw)


def sigmoid(a: Tensor) -> Tensor:
    # stable two-branch evaluation
    x = a.data
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def bw(g, grads):
        grads[0] = g * data * (1.0 - data)

    return _make(data, "sigmoid", (a,), bw)


def softplus(a: Tensor) -> Tensor:
    data = np.logaddexp(0.0, a.data)

    def bw(g, grads):
        x = a.data
        sig = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                       np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        grads[0] = g * sig

    return _make(data, "softplus", (a,), bw)


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    data = x * cdf

    def bw(g, grads):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
        grads[0] = g * (cdf + x * pdf)

    return _make(data, "gelu", (a,), bw)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    data = a.data.reshape(shape)

    def bw(g, grads):
        grads[0] = g.reshape(a.shape)

    return _make(data, "reshape", (a,), bw)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    data = np.ascontiguousarray(a.data.transpose(axes))
    inv = np.argsort(axes)

    def bw(g, grads):
        grads[0] = np.ascontiguousarray(g.transpose(inv))

    return _make(data, "transpose", (a,), bw)


def concat(tensors, axis: int) -> Tensor:
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g, grads):
        for i, piece in enumerate(np.split(g, splits, axis=axis)):
            grads[i] = piece

    return _make(data, "concat", tuple(tensors), bw)


def slice_(a: Tensor, slices) -> Tensor:
    """Basic slicing with a tuple of ``slice`` objects (no strides/ellipsis)."""
    slices = tuple(slices)
    data = np.ascontiguousarray(a.data[slices])

    def bw(g, grads):
        full = np.zeros(a.shape, dtype=g.dtype)
        full[slices] = g
        grads[0] = full

    return _make(data, "slice", (a,), bw)


def _reflect_indices(b: int, n: int, e: int) -> np.ndarray:
    """Map padded positions (length b+n+e) to source indices in [0, n).

    Mirrors without repeating the edge sample, matching np.pad 'reflect';
    the triangle wave has period 2n-2 so any pad width folds correctly.
    """
    p = np.arange(b + n + e) - b
    if n == 1:
        return np.zeros_like(p)
    m = np.mod(p, 2 * n - 2)
    return np.where(m < n, m, 2 * n - 2 - m)


def pad(a: Tensor, widths, mode: str = "constant") -> Tensor:
    """Zero or reflect padding; ``widths`` is ((before, after), ...) per axis."""
    widths = tuple((int(b), int(e)) for b, e in widths)
    if mode not in ("constant", "reflect"):
        raise ValueError(f"unsupported pad mode {mode!r}")
    data = np.pad(a.data, widths, mode=mode)
    core = tuple(slice(b, b + n) for (b, _), n in zip(widths, a.shape))

    def bw(g, grads):
        if mode == "constant":
            grads[0] = np.ascontiguousarray(g[core])
            return
        # reflect: fold each padded strip back onto the interior sample it mirrors
        gx = g
        for ax, (b, e) in enumerate(widths):
            if b == 0 and e == 0:
                continue
            n = a.shape[ax]
            idx = _reflect_indices(b, n, e)
            moved = np.moveaxis(gx, ax, 0)
            out = np.zeros((n,) + moved.shape[1:], dtype=g.dtype)
            np.add.at(out, idx, moved)
            gx = np.moveaxis(out, 0, ax)
        grads[0] = np.ascontiguousarray(gx)

    return _make(data, f"pad_{mode}", (a,), bw)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matmul over the trailing two axes (leading dims broadcast)."""
    data = np.matmul(a.data, b.data)

    def bw(g, grads):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        grads[0] = _unbroadcast(ga, a.shape)
        grads[1] = _unbroadcast(gb, b.shape)

    return _make(data, "matmul", (a, b), bw)


def conv1x1(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Per-pixel channel mixing: x (B,C,H,W), w (Cout,Cin), b (Cout,)."""
    data = np.einsum("oc,bchw->bohw", w.data, x.data, optimize=True)
    if b is not None:
        data = data + b.data[None, :, None, None]

    def bw(g, grads):
        grads[0] = np.einsum("oc,bohw->bchw", w.data, g, optimize=True)
        grads[1] = np.einsum("bohw,bchw->oc", g, x.data, optimize=True)
        if b is not None:
            grads[2] = g.sum(axis=(0, 2, 3))

    parents = (x, w) if b is None else (x, w, b)
    return _make(data, "conv1x1", parents, bw)


# ---------------------------------------------------------------------------
# normalization and attention pieces
# ---------------------------------------------------------------------------

def layernorm(a: Tensor, eps: float = LAYERNORM_EPS) -> Tensor:
    """Normalize over the last axis (pre-affine: zero mean, unit variance)."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    data = xc * inv

    def bw(g, grads):
        gm = g.mean(axis=-1, keepdims=True)
        gym = (g * data).mean(axis=-1, keepdims=True)
        grads[0] = (g - gm - data * gym) * inv

    return _make(data, "layernorm", (a,), bw)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, computed with max subtraction."""
    x = a.data
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    data = e / e.sum(axis=-1, keepdims=True)

    def bw(g, grads):
        dot = (g * data).sum(axis=-1, keepdims=True)
        grads[0] = data * (g - dot)

    return _make(data, "softmax", (a,), bw)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g, grads):
        if axis is None:
            grads[0] = np.broadcast_to(g, a.shape).astype(a.dtype, copy=True)
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        grads[0] = np.broadcast_to(g, a.shape).astype(a.dtype, copy=True)

    return _make(data, "sum", (a,), bw)


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[i] for i in axes]))
    data = a.data.mean(axis=axis, keepdims=keepdims)

    def bw(g, grads):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        grads[0] = np.broadcast_to(g / count, a.shape).astype(a.dtype, copy=True)

    return _make(data, "mean", (a,), bw)


# ---------------------------------------------------------------------------
# 2-D resampling (NCHW, fixed factor 2)
# ---------------------------------------------------------------------------

def avg_pool2d(x: Tensor) -> Tensor:
    """2x2 average pooling, stride 2; spatial extents must be even."""
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ValueError(f"avg_pool2d needs even extents, got {H}x{W}")
    data = x.data.reshape(B, C, H // 2, 2, W // 2, 2).mean(axis=(3, 5))

    def bw(g, grads):
        up = np.repeat(np.repeat(g, 2, axis=2), 2, axis=3)
        grads[0] = up * 0.25

    return _make(data, "avg_pool2d", (x,), bw)


def upsample_nearest2d(x: Tensor) -> Tensor:
    """2x nearest-neighbour upsampling."""
    data = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def bw(g, grads):
        B, C, H2, W2 = g.shape
        grads[0] = g.reshape(B, C, H2 // 2, 2, W2 // 2, 2).sum(axis=(3, 5))

    return _make(data, "upsample_nearest2d", (x,), bw)


def _bilinear_matrix(n_in: int, dtype) -> np.ndarray:
    """Dense (2n x n) interpolation matrix for 2x bilinear upsampling.

    Output sample o reads input coordinate (o + 0.5)/2 - 0.5, clamped to the
    valid range (half-pixel centers, no corner alignment).
    """
    n_out = 2 * n_in
    U = np.zeros((n_out, n_in), dtype=dtype)
    for o in range(n_out):
        src = (o + 0.5) / 2.0 - 0.5
        src = min(max(src, 0.0), n_in - 1.0)
        i0 = int(math.floor(src))
        i1 = min(i0 + 1, n_in - 1)
        w1 = src - i0
        U[o, i0] += 1.0 - w1
        U[o, i1] += w1
    return U


_BILINEAR_CACHE: dict = {}


def _bilinear_mats(H: int, W: int, dtype):
    key = (H, W, np.dtype(dtype).str)
    if key not in _BILINEAR_CACHE:
        _BILINEAR_CACHE[key] = (_bilinear_matrix(H, dtype), _bilinear_matrix(W, dtype))
    return _BILINEAR_CACHE[key]


def upsample_bilinear2d(x: Tensor) -> Tensor:
    """2x bilinear upsampling (half-pixel centers), exact adjoint backward."""
    B, C, H, W = x.shape
    Ur, Uc = _bilinear_mats(H, W, x.dtype)
    data = np.einsum("rh,bchw,sw->bcrs", Ur, x.data, Uc, optimize=True)

    def bw(g, grads):
        grads[0] = np.einsum("rh,bcrs,sw->bchw", Ur, g, Uc, optimize=True)

    return _make(data, "upsample_bilinear2d", (x,), bw)


# ---------------------------------------------------------------------------
# dynamic per-pixel filtering (compiled kernel or numpy fallback)
# ---------------------------------------------------------------------------

def dynamic_filter(x_pad: Tensor, kernels: Tensor, ksize: int) -> Tensor:
    """Apply per-pixel kernels to a pre-padded feature map.

    x_pad (B,C,H+k-1,W+k-1), kernels (B,k*k,H,W) ->
    y[b,c,i,j] = sum_{u,v} kernels[b,u*k+v,i,j] * x_pad[b,c,i+u,j+v]
    """
    from cassikit import kernels as kbackend

    data = kbackend.dynfilter_forward(x_pad.data, kernels.data, ksize)

    def bw(g, grads):
        gx, gk = kbackend.dynfilter_backward(x_pad.data, kernels.data, g, ksize)
        grads[0] = gx
        grads[1] = gk

    return _make(data, "dynamic_filter", (x_pad, kernels), bw)


def grid_resample(x: Tensor, offsets: Tensor) -> Tensor:
    """Bilinear resampling of x (B,C,H,W) at grid + offsets (B,2,H,W).

    offsets[:,0] shifts rows, offsets[:,1] shifts columns; sample coordinates
    clamp to the image border.  offsets == 0 reproduces x exactly.
    """
    B, C, H, W = x.shape
    rows = np.arange(H, dtype=x.dtype)[None, :, None]
    cols = np.arange(W, dtype=x.dtype)[None, None, :]
    r = np.clip(rows + offsets.data[:, 0], 0.0, H - 1.0)
    c = np.clip(cols + offsets.data[:, 1], 0.0, W - 1.0)
    r0 = np.floor(r).astype(np.int64)
    c0 = np.floor(c).astype(np.int64)
    r1 = np.minimum(r0 + 1, H - 1)
    c1 = np.minimum(c0 + 1, W - 1)
    wr = (r - r0).astype(x.dtype)[:, None]
    wc = (c - c0).astype(x.dtype)[:, None]
    bidx = np.arange(B)[:, None, None, None]
    r0e, r1e = r0[:, None], r1[:, None]
    c0e, c1e = c0[:, None], c1[:, None]
    v00 = x.data[bidx, np.arange(C)[None, :, None, None], r0e, c0e]
    v01 = x.data[bidx, np.arange(C)[None, :, None, None], r0e, c1e]
    v10 = x.data[bidx, np.arange(C)[None, :, None, None], r1e, c0e]
    v11 = x.data[bidx, np.arange(C)[None, :, None, None], r1e, c1e]
    data = ((1 - wr) * ((1 - wc) * v00 + wc * v01)
            + wr * ((1 - wc) * v10 + wc * v11))

    def bw(g, grads):
        cidx = np.arange(C)[None, :, None, None]
        gx = np.zeros_like(x.data)
        np.add.at(gx, (bidx, cidx, r0e, c0e), g * (1 - wr) * (1 - wc))
        np.add.at(gx, (bidx, cidx, r0e, c1e), g * (1 - wr) * wc)
        np.add.at(gx, (bidx, cidx, r1e, c0e), g * wr * (1 - wc))
        np.add.at(gx, (bidx, cidx, r1e, c1e), g * wr * wc)
        # d out / d r: interior of the clamp only (zero where clamped flat)
        dr = ((1 - wc) * (v10 - v00) + wc * (v11 - v01))
        dc = ((1 - wr) * (v01 - v00) + wr * (v11 - v10))
        in_r = ((rows + offsets.data[:, 0] > 0.0)
                & (rows + offsets.data[:, 0] < H - 1.0)).astype(x.dtype)[:, None]
        in_c = ((cols + offsets.data[:, 1] > 0.0)
                & (cols + offsets.data[:, 1] < W - 1.0)).astype(x.dtype)[:, None]
        go = np.zeros_like(offsets.data)
        go[:, 0] = (g * dr * in_r).sum(axis=1)
        go[:, 1] = (g * dc * in_c).sum(axis=1)
        grads[0] = gx
        grads[1] = go

    return _make(data, "grid_resample", (x, offsets), bw)


# ---------------------------------------------------------------------------
# tape walk
# ---------------------------------------------------------------------------

def _toposort(root: Tensor):
    order, stack, seen = [], [(root, False)], set()
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate gradients of a scalar ``loss`` into every reachable
    requires_grad tensor's ``.grad`` (added to any existing gradient)."""
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any requires_grad tensor "
                         "(was forward run under no_grad?)")
    order = _toposort(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is not None:
            local = [None] * len(node._parents)
            node._backward(g, local)
            for p, pg in zip(node._parents, local):
                if pg is None or not p.requires_grad:
                    continue
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg
        if node._backward is None:
            # leaf: accumulate; interior grads are dropped as the walk passes
            node.grad = g if node.grad is None else node.grad + g
