"""Minimal double-precision tensor with tape-based reverse-mode autodiff.

A :class:`Tape` records every differentiable op executed while it is active,
in forward order. ``Tape.backward`` replays the records in reverse. Outside a
tape, ops run forward-only with no bookkeeping.

Shapes must match exactly; there is no broadcasting. Ops that need to spread a
smaller operand (bias rows, channel-shared maps) have dedicated primitives.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

__all__ = [
    "Tensor", "Tape", "GradCheckReport", "custom_op", "grad_check",
    "matmul", "conv2d", "softmax", "sigmoid", "relu", "add", "mul", "scale",
    "mean", "upsample_nearest", "mse_loss", "bias_add", "reshape", "transpose",
    "concat", "take", "avg_pool2d", "broadcast_channels",
]

GRAD_TOL = 1e-4

_local = threading.local()


def _dtype():
    return getattr(_local, "dtype", np.float64)


class _OraclePrecision:
    """Evaluate forward passes in extended precision (finite-difference oracle only)."""

    def __enter__(self):
        self.prev = _dtype()
        _local.dtype = np.longdouble

    def __exit__(self, *exc):
        _local.dtype = self.prev


def _active_tape() -> "Tape | None":
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    """Immutable N-d float64 array plus a mutable ``grad`` slot."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=_dtype())  # always a private copy
        arr.setflags(write=False)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        arr = np.asarray(arr, dtype=_dtype(), order="C")
        arr.setflags(write=False)
        t.data = arr
        t.grad = None
        t.requires_grad = False
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad = self.grad + g

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"


class Tape:
    """Records ops in forward order; ``backward`` walks them in reverse."""

    def __init__(self):
        self.records: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []

    def __enter__(self) -> "Tape":
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def record(self, out: Tensor, backward: Callable[[np.ndarray], None]) -> None:
        self.records.append((out, backward))

    def backward(self, out: Tensor, seed: np.ndarray | None = None) -> None:
        if seed is None:
            seed = np.ones(out.shape)
        seed = np.asarray(seed, dtype=np.float64)
        if seed.shape != out.shape:
            raise ShapeError(f"backward seed shape {seed.shape} != output shape {out.shape}")
        out._accumulate(seed)
        for node, fn in reversed(self.records):
            if node.grad is not None:
                fn(node.grad)
        # intermediate grads are not needed after the sweep
        for node, _ in self.records:
            if node is not out:
                node.grad = None


def custom_op(data: np.ndarray, inputs: Sequence[Tensor],
              backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Tensor:
    """Wrap ``data`` as the output of an op over ``inputs``.

    ``backward(g)`` returns one gradient (or None) per input. It is only
    recorded when a tape is active and some input requires grad.
    """
    out = Tensor._wrap(data)
    tape = _active_tape()
    if tape is None or not any(t.requires_grad for t in inputs):
        return out
    out.requires_grad = True

    def _bw(g: np.ndarray) -> None:
        grads = backward(g)
        for t, gi in zip(inputs, grads):
            if gi is not None and t.requires_grad:
                t._accumulate(gi)

    tape.record(out, _bw)
    return out


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# --- elementwise ---------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return custom_op(a.data + b.data, (a, b), lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return custom_op(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return custom_op(x.data * c, (x,), lambda g: (g * c,))


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return custom_op(y, (x,), lambda g: (g * y * (1.0 - y),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return custom_op(np.maximum(x.data, 0.0), (x,), lambda g: (g * mask,))  # NaN propagates


# --- reductions and losses -----------------------------------------------

def mean(x: Tensor, axis: int | tuple[int, ...] | None = None) -> Tensor:
    """Mean over ``axis`` (all axes by default, giving a 0-d tensor)."""
    shape = x.shape
    y = x.data.mean(axis=axis)
    if axis is None:
        count = x.size
        return custom_op(y, (x,), lambda g: (np.full(shape, g / count),))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(a % len(shape) for a in axes)
    count = int(np.prod([shape[a] for a in axes]))

    def bw(g):
        return (np.broadcast_to(np.expand_dims(g, axes), shape) / count,)

    return custom_op(y, (x,), bw)


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    _same_shape("mse_loss", pred, target)
    diff = pred.data - target.data
    n = diff.size
    loss = np.mean(diff * diff)
    return custom_op(loss, (pred, target),
                     lambda g: (2.0 * g * diff / n, -2.0 * g * diff / n))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.data.ndim <= axis < x.data.ndim:
        raise ShapeError(f"softmax: axis {axis} invalid for shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return custom_op(y, (x,), bw)


# --- linear algebra --------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return custom_op(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def bias_add(x: Tensor, b: Tensor) -> Tensor:
    """Add a length-n vector to every row of an m x n matrix."""
    if x.data.ndim != 2 or b.shape != (x.shape[1],):
        raise ShapeError(f"bias_add: bias {b.shape} does not fit rows of {x.shape}")
    return custom_op(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=0)))


# --- shape plumbing --------------------------------------------------------

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    src = x.shape
    return custom_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),))


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    axes = tuple(reversed(range(x.data.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return custom_op(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.data.ndim != len(ref) or any(
                s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != axis % len(ref)):
            raise ShapeError(f"concat: {t.shape} does not match {ref} off axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]
    y = np.concatenate([t.data for t in tensors], axis=axis)
    return custom_op(y, tensors, lambda g: np.split(g, bounds, axis=axis))


def take(x: Tensor, start: int, stop: int) -> Tensor:
    """Rows ``start:stop`` along axis 0."""
    if not 0 <= start < stop <= x.shape[0]:
        raise ShapeError(f"take: range {start}:{stop} outside axis of length {x.shape[0]}")
    src = x.shape

    def bw(g):
        full = np.zeros(src)
        full[start:stop] = g
        return (full,)

    return custom_op(x.data[start:stop], (x,), bw)


def broadcast_channels(m: Tensor, channels: int) -> Tensor:
    """Repeat an H x W map into a channels x H x W stack."""
    if m.data.ndim != 2:
        raise ShapeError(f"broadcast_channels: expected a 2-d map, got {m.shape}")
    y = np.broadcast_to(m.data, (channels,) + m.shape)
    return custom_op(y, (m,), lambda g: (g.sum(axis=0),))


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    """Nearest-neighbour upsampling of the last two axes by an integer factor."""
    if factor < 1:
        raise ShapeError(f"upsample_nearest: factor must be >= 1, got {factor}")
    if x.data.ndim < 2:
        raise ShapeError(f"upsample_nearest: need at least 2 axes, got {x.shape}")
    y = np.repeat(np.repeat(x.data, factor, axis=-2), factor, axis=-1)
    src = x.shape

    def bw(g):
        h, w = src[-2], src[-1]
        g = g.reshape(src[:-2] + (h, factor, w, factor))
        return (g.sum(axis=(-3, -1)),)

    return custom_op(y, (x,), bw)


# --- convolution and pooling ----------------------------------------------

def _out_extent(n: int, k: int, stride: int, pad: int, what: str) -> int:
    span = n + 2 * pad - k
    if span < 0:
        raise ShapeError(f"{what}: kernel {k} larger than padded extent {n + 2 * pad}")
    if span % stride:
        raise ShapeError(f"{what}: ({n}+2*{pad}-{k}) is not divisible by stride {stride}")
    return span // stride + 1


def conv2d(x: Tensor, kernels: Tensor, stride: int = 1, pad: int = 0,
           bias: Tensor | None = None) -> Tensor:
    """Cross-correlation of a C_in x H x W input with C_out x C_in x kh x kw kernels."""
    if x.data.ndim != 3 or kernels.data.ndim != 4:
        raise ShapeError(f"conv2d: expected 3-d input and 4-d kernels, got {x.shape}, {kernels.shape}")
    c_in, h, w = x.shape
    c_out, kc, kh, kw = kernels.shape
    if kc != c_in:
        raise ShapeError(f"conv2d: kernels expect {kc} input channels, input has {c_in}")
    if stride < 1 or pad < 0:
        raise ShapeError(f"conv2d: invalid stride {stride} / pad {pad}")
    ho = _out_extent(h, kh, stride, pad, "conv2d")
    wo = _out_extent(w, kw, stride, pad, "conv2d")
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad))) if pad else x.data
    if kh == kw == 1 and stride == 1:
        cols = xp.reshape(c_in, ho * wo)
    else:
        win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
        # im2col: (C_in*kh*kw) x (ho*wo)
        cols = win.transpose(0, 3, 4, 1, 2).reshape(c_in * kh * kw, ho * wo)
    k2 = kernels.data.reshape(c_out, c_in * kh * kw)
    y = (k2 @ cols).reshape(c_out, ho, wo)
    inputs: tuple[Tensor, ...] = (x, kernels)
    if bias is not None:
        if bias.shape != (c_out,):
            raise ShapeError(f"conv2d: bias {bias.shape} does not match {c_out} output channels")
        y = y + bias.data[:, None, None]
        inputs = (x, kernels, bias)

    def bw(g):
        g2 = g.reshape(c_out, ho * wo)
        gk = (g2 @ cols.T).reshape(kernels.shape)
        gx = None
        if x.requires_grad:
            gcols = (k2.T @ g2).reshape(c_in, kh, kw, ho, wo)
            if kh == kw == 1 and stride == 1:
                gxp = gcols.reshape(xp.shape)
            else:
                gxp = np.zeros(xp.shape)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, i:i + stride * (ho - 1) + 1:stride,
                            j:j + stride * (wo - 1) + 1:stride] += gcols[:, i, j]
            gx = gxp[:, pad:pad + h, pad:pad + w] if pad else gxp
        out = [gx, gk]
        if bias is not None:
            out.append(g2.sum(axis=1))
        return out

    return custom_op(y, inputs, bw)


def avg_pool2d(x: Tensor, kernel: int, stride: int | None = None) -> Tensor:
    """Average pooling over the last two axes of a C x H x W tensor."""
    stride = kernel if stride is None else stride
    if x.data.ndim != 3:
        raise ShapeError(f"avg_pool2d: expected C x H x W, got {x.shape}")
    c, h, w = x.shape
    ho = _out_extent(h, kernel, stride, 0, "avg_pool2d")
    wo = _out_extent(w, kernel, stride, 0, "avg_pool2d")
    win = sliding_window_view(x.data, (kernel, kernel), axis=(1, 2))[:, ::stride, ::stride]
    y = win.mean(axis=(3, 4))
    inv = 1.0 / (kernel * kernel)

    def bw(g):
        gx = np.zeros((c, h, w))
        gs = g * inv
        for i in range(kernel):
            for j in range(kernel):
                gx[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += gs
        return (gx,)

    return custom_op(y, (x,), bw)


# --- finite-difference verification -----------------------------------------

@dataclass(frozen=True)
class GradCheckReport:
    op: str
    max_rel_error: float
    passed: bool


def grad_check(fn: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-5,
               name: str | None = None, seed: int = 0,
               max_coords: int | None = None) -> GradCheckReport:
    """Compare tape gradients of ``fn`` against central differences.

    The output is reduced to a scalar with a fixed random projection so every
    output coordinate contributes. Every input is checked; with ``max_coords``
    at most that many coordinates per input are sampled.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"epsilon {eps} outside [1e-7, 1e-3]")
    rng = np.random.default_rng(seed)
    base = [np.array(t.data) for t in inputs]

    def fresh(arrays):
        return [Tensor(a, requires_grad=True) for a in arrays]

    leaves = fresh(base)
    with Tape() as tape:
        out = fn(*leaves)
    proj = rng.standard_normal(out.shape)
    tape.backward(out, proj)
    analytic = [np.zeros(a.shape) if t.grad is None else t.grad for a, t in zip(base, leaves)]

    def f(arrays) -> np.ndarray:
        with _OraclePrecision():
            return fn(*[Tensor(a) for a in arrays]).data

    # The numeric side runs in extended precision so its own roundoff stays far
    # below the 1e-8 denominator floor even for near-zero gradient components.
    wide = [a.astype(np.longdouble) for a in base]
    worst = 0.0
    for k, arr in enumerate(base):
        coords = np.arange(arr.size)
        if max_coords is not None and arr.size > max_coords:
            coords = rng.choice(arr.size, size=max_coords, replace=False)
        for idx in coords:
            pos = [a if i != k else a.copy() for i, a in enumerate(wide)]
            neg = [a if i != k else a.copy() for i, a in enumerate(wide)]
            pos[k].flat[idx] += eps
            neg[k].flat[idx] -= eps
            step = pos[k].flat[idx] - neg[k].flat[idx]
            # difference before projecting: unaffected outputs cancel exactly
            numeric = float(np.sum((f(pos) - f(neg)) * proj) / step)
            an = float(analytic[k].flat[idx])
            denom = max(abs(an), abs(numeric), 1e-8)
            worst = max(worst, abs(an - numeric) / denom)
    label = name or getattr(fn, "__name__", "op")
    return GradCheckReport(label, worst, worst < GRAD_TOL)
