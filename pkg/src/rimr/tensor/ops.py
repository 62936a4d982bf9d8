"""Differentiable operations over :class:`Tensor`.

Every op computes its forward value in numpy and registers a closure that
maps the output gradient to per-input gradients. Inputs that do not require
gradients get ``None`` and their (possibly expensive) gradient is skipped.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autograd import Tensor, as_tensor

# ---------------------------------------------------------------------------
# elementwise arithmetic


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _lift(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


def add(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    out = a.data + b.data

    def bw(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)

    return Tensor.from_op(out, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    out = a.data - b.data

    def bw(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.shape) if b.requires_grad else None)

    return Tensor.from_op(out, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    out = a.data * b.data

    def bw(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return Tensor.from_op(out, (a, b), bw, "mul")


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    out = np.asarray(x.data.sum(), dtype=x.dtype)
    return Tensor.from_op(out, (x,), lambda g: (np.broadcast_to(g, x.shape).astype(x.dtype),), "sum")


def mean(x: Tensor) -> Tensor:
    n = x.size
    out = np.asarray(x.data.mean(), dtype=x.dtype)
    return Tensor.from_op(
        out, (x,), lambda g: (np.full(x.shape, g / n, dtype=x.dtype),), "mean")


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out = x.data.reshape(shape)
    return Tensor.from_op(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = x.data.transpose(axes)
    return Tensor.from_op(out, (x,), lambda g: (g.transpose(inverse),), "transpose")


def concat(xs: Sequence[Tensor], axis: int) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    out = np.concatenate([x.data for x in xs], axis=axis)
    bounds = np.cumsum([0] + [x.shape[axis] for x in xs])

    def bw(g):
        grads = []
        for x, lo, hi in zip(xs, bounds[:-1], bounds[1:]):
            if not x.requires_grad:
                grads.append(None)
                continue
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            grads.append(g[tuple(index)])
        return grads

    return Tensor.from_op(out, xs, bw, "concat")


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    out = np.broadcast_to(x.data, shape).copy()
    return Tensor.from_op(out, (x,), lambda g: (_unbroadcast(g, x.shape),), "broadcast_to")


def take(x: Tensor, indices: np.ndarray, axis: int) -> Tensor:
    """Gather along ``axis``; repeated indices accumulate gradient."""
    indices = np.asarray(indices, dtype=np.intp)
    out = np.take(x.data, indices, axis=axis)

    def bw(g):
        gx = np.zeros_like(x.data)
        moved = np.moveaxis(gx, axis, 0)
        np.add.at(moved, indices, np.moveaxis(g, axis, 0))
        return (gx,)

    return Tensor.from_op(out, (x,), bw, "take")


def detach(x: Tensor) -> Tensor:
    return x.detach()


def straight_through(value: float, surrogate: Tensor) -> Tensor:
    """Scalar that reports ``value`` but backpropagates ``surrogate``'s gradient."""
    out = np.asarray(value, dtype=surrogate.dtype)
    return Tensor.from_op(out, (surrogate,), lambda g: (np.broadcast_to(g, surrogate.shape).astype(surrogate.dtype),),
                          "straight_through")


# ---------------------------------------------------------------------------
# dense layers


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` over the last axis of ``x`` (leading axes are batch)."""
    if x.ndim < 1 or w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ValueError(f"linear: input shape {x.shape} incompatible with weight shape {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ValueError(f"linear: bias shape {b.shape} does not match weight shape {w.shape}")
    out = x.data @ w.data
    if b is not None:
        out = out + b.data
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        gx = g @ w.data.T if x.requires_grad else None
        gw = None
        if w.requires_grad:
            gw = x.data.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        grads = [gx, gw]
        if b is not None:
            grads.append(g.reshape(-1, g.shape[-1]).sum(axis=0) if b.requires_grad else None)
        return grads

    return Tensor.from_op(out, parents, bw, "linear")


# ---------------------------------------------------------------------------
# convolution (N-d core shared by conv2d, conv3d, conv_transpose2d)


def _as_tuple(v, n: int) -> tuple[int, ...]:
    if isinstance(v, (int, np.integer)):
        return (int(v),) * n
    v = tuple(int(i) for i in v)
    if len(v) != n:
        raise ValueError(f"expected {n} values, got {v}")
    return v


def _out_extent(size: int, k: int, s: int, p: int) -> int:
    return (size + 2 * p - k) // s + 1


def _pad(x: np.ndarray, pad: tuple[int, ...]) -> np.ndarray:
    if not any(pad):
        return x
    return np.pad(x, [(0, 0), (0, 0)] + [(p, p) for p in pad])


def _windows(xp: np.ndarray, ksize, stride, out_sp) -> np.ndarray:
    """View of shape (N, C, *out, *k) over a padded input."""
    nd = len(ksize)
    view = sliding_window_view(xp, ksize, axis=tuple(range(2, 2 + nd)))
    index = (slice(None), slice(None)) + tuple(
        slice(0, o * s, s) for o, s in zip(out_sp, stride))
    return view[index]


def _conv_forward(x: np.ndarray, w: np.ndarray, stride, pad) -> np.ndarray:
    nd = w.ndim - 2
    ksize = w.shape[2:]
    out_sp = tuple(_out_extent(n, k, s, p) for n, k, s, p in zip(x.shape[2:], ksize, stride, pad))
    win = _windows(_pad(x, pad), ksize, stride, out_sp)
    # contract channel and kernel axes: (N,C,*O,*k) x (K,C,*k) -> (N,*O,K)
    axes_x = [1] + list(range(2 + nd, 2 + 2 * nd))
    axes_w = list(range(1, 2 + nd))
    out = np.tensordot(win, w, axes=(axes_x, axes_w))
    return np.ascontiguousarray(np.moveaxis(out, -1, 1))


def _conv_grad_input(g: np.ndarray, w: np.ndarray, in_sp, stride, pad) -> np.ndarray:
    """Adjoint of :func:`_conv_forward` with respect to its input."""
    n = g.shape[0]
    c = w.shape[1]
    out_sp = g.shape[2:]
    padded = tuple(i + 2 * p for i, p in zip(in_sp, pad))
    gxp = np.zeros((n, c) + padded, dtype=g.dtype)
    for offset in np.ndindex(*w.shape[2:]):
        # (N,K,*O) x (K,C) -> (N,*O,C)
        contrib = np.tensordot(g, w[(slice(None), slice(None)) + offset], axes=([1], [0]))
        index = (slice(None), slice(None)) + tuple(
            slice(o, o + s * (e - 1) + 1, s) for o, s, e in zip(offset, stride, out_sp))
        gxp[index] += np.moveaxis(contrib, -1, 1)
    crop = (slice(None), slice(None)) + tuple(slice(p, p + i) for p, i in zip(pad, in_sp))
    return gxp[crop]


def _conv_grad_weight(x: np.ndarray, g: np.ndarray, ksize, stride, pad) -> np.ndarray:
    nd = len(ksize)
    win = _windows(_pad(x, pad), ksize, stride, g.shape[2:])
    # (N,K,*O) x (N,C,*O,*k) -> (K,C,*k)
    axes_g = [0] + list(range(2, 2 + nd))
    axes_x = [0] + list(range(2, 2 + nd))
    return np.tensordot(g, win, axes=(axes_g, axes_x))


def _check_conv(x: Tensor, kernels: Tensor, nd: int, name: str):
    if x.ndim != nd + 2 or kernels.ndim != nd + 2:
        raise ValueError(f"{name}: expected input (N,C,{'D,' if nd == 3 else ''}H,W) and "
                         f"kernels (K,C,...), got {x.shape} and {kernels.shape}")
    if x.shape[1] != kernels.shape[1]:
        raise ValueError(f"{name}: input channels {x.shape[1]} != kernel channels {kernels.shape[1]} "
                         f"(input {x.shape}, kernels {kernels.shape})")


def _conv_nd(x: Tensor, kernels: Tensor, stride, pad, nd: int, name: str) -> Tensor:
    _check_conv(x, kernels, nd, name)
    stride = _as_tuple(stride, nd)
    pad = _as_tuple(pad, nd)
    ksize = kernels.shape[2:]
    out_sp = tuple(_out_extent(n, k, s, p) for n, k, s, p in zip(x.shape[2:], ksize, stride, pad))
    if any(o <= 0 for o in out_sp):
        raise ValueError(f"{name}: non-positive output extent {out_sp} for input {x.shape}, "
                         f"kernel {ksize}, stride {stride}, pad {pad}")
    out = _conv_forward(x.data, kernels.data, stride, pad)
    in_sp = x.shape[2:]

    def bw(g):
        gx = _conv_grad_input(g, kernels.data, in_sp, stride, pad) if x.requires_grad else None
        gk = _conv_grad_weight(x.data, g, ksize, stride, pad) if kernels.requires_grad else None
        return gx, gk

    return Tensor.from_op(out, (x, kernels), bw, name)


def conv3d(x: Tensor, kernels: Tensor, stride=1, pad=0) -> Tensor:
    """Cross-correlation of (N,C,D,H,W) input with (K,C,kd,kh,kw) kernels."""
    return _conv_nd(x, kernels, stride, pad, 3, "conv3d")


def conv2d(x: Tensor, kernels: Tensor, stride=1, pad=0) -> Tensor:
    """Cross-correlation of (N,C,H,W) input with (K,C,kh,kw) kernels."""
    return _conv_nd(x, kernels, stride, pad, 2, "conv2d")


def conv_transpose2d(x: Tensor, kernels: Tensor, stride=1, pad=0) -> Tensor:
    """Adjoint of :func:`conv2d` for the same kernels.

    ``kernels`` has shape (C_in, C_out, kh, kw): it maps the C_in channels
    that ``conv2d(., kernels)`` would produce back to C_out channels. Output
    extent is ``(in - 1) * stride - 2 * pad + k``.
    """
    if x.ndim != 4 or kernels.ndim != 4:
        raise ValueError(f"conv_transpose2d: expected 4-d input and kernels, got {x.shape} and {kernels.shape}")
    if x.shape[1] != kernels.shape[0]:
        raise ValueError(f"conv_transpose2d: input channels {x.shape[1]} != kernel in-channels "
                         f"{kernels.shape[0]} (input {x.shape}, kernels {kernels.shape})")
    stride = _as_tuple(stride, 2)
    pad = _as_tuple(pad, 2)
    ksize = kernels.shape[2:]
    out_sp = tuple((i - 1) * s - 2 * p + k for i, s, p, k in zip(x.shape[2:], stride, pad, ksize))
    if any(o <= 0 for o in out_sp):
        raise ValueError(f"conv_transpose2d: non-positive output extent {out_sp}")
    out = _conv_grad_input(x.data, kernels.data, out_sp, stride, pad)

    def bw(g):
        gx = _conv_forward(g, kernels.data, stride, pad) if x.requires_grad else None
        gk = _conv_grad_weight(g, x.data, ksize, stride, pad) if kernels.requires_grad else None
        return gx, gk

    return Tensor.from_op(out, (x, kernels), bw, "conv_transpose2d")


# ---------------------------------------------------------------------------
# reductions


def topk_indices(values: np.ndarray, axis: int, k: int) -> np.ndarray:
    """Indices of the k largest entries along ``axis``; ties go to the lowest index."""
    if k == 1:
        # argmax already returns the first maximum
        return np.expand_dims(np.argmax(values, axis=axis), axis)
    order = np.argsort(-values, axis=axis, kind="stable")
    return np.take(order, np.arange(k), axis=axis)


def reduce_topk_max(x: Tensor, axis: int, k: int) -> Tensor:
    """The ``k`` largest values along ``axis``, sorted descending."""
    axis = axis % x.ndim
    extent = x.shape[axis]
    if not 1 <= k <= extent:
        raise ValueError(f"reduce_topk_max: k={k} outside [1, {extent}] for axis {axis} of {x.shape}")
    idx = topk_indices(x.data, axis, k)
    out = np.take_along_axis(x.data, idx, axis=axis)

    def bw(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx, g, axis=axis)
        return (gx,)

    return Tensor.from_op(out, (x,), bw, "reduce_topk_max")


def max_pool(x: Tensor, axis: int) -> Tensor:
    """Max over ``axis`` with the axis removed."""
    out = reduce_topk_max(x, axis, 1)
    shape = list(out.shape)
    del shape[axis % x.ndim]
    return reshape(out, shape)


# ---------------------------------------------------------------------------
# activations


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor.from_op(np.where(mask, x.data, 0).astype(x.dtype), (x,),
                          lambda g: (g * mask,), "relu")


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    mask = x.data > 0
    scale = np.where(mask, 1.0, slope).astype(x.dtype)
    return Tensor.from_op(x.data * scale, (x,), lambda g: (g * scale,), "leaky_relu")


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    z = x.data
    e = np.exp(-np.abs(z))
    out = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return Tensor.from_op(out, (x,), lambda g: (g * out * (1 - out),), "sigmoid")


# ---------------------------------------------------------------------------
# batch normalization


@dataclass
class RunningStats:
    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.1

    @classmethod
    def for_channels(cls, channels: int, dtype=np.float32) -> "RunningStats":
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype))


BN_EPS = 1e-5


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running: RunningStats | None,
               mode: str = "train", eps: float = BN_EPS) -> Tensor:
    """Per-channel normalization over every axis except axis 1.

    Train mode normalizes by batch statistics and updates ``running`` in
    place; eval mode uses ``running`` and is a pure function of ``x``.
    """
    if x.ndim < 2:
        raise ValueError(f"batch_norm: need (N,C,...) input, got {x.shape}")
    channels = x.shape[1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise ValueError(f"batch_norm: gamma/beta shapes {gamma.shape}/{beta.shape} != ({channels},)")
    if x.size == 0:
        raise ValueError("batch_norm: zero-size batch")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, channels) + (1,) * (x.ndim - 2)
    count = x.size // channels

    if mode == "train":
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if running is not None:
            m = running.momentum
            unbiased = var * count / max(count - 1, 1)
            running.mean[...] = (1 - m) * running.mean + m * mu
            running.var[...] = (1 - m) * running.var + m * unbiased
    elif mode == "eval":
        if running is None:
            raise ValueError("batch_norm: eval mode needs running statistics")
        mu, var = running.mean, running.var
    else:
        raise ValueError(f"batch_norm: unknown mode {mode!r}")

    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mu.reshape(bshape)) * inv_std.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)
    out = out.astype(x.dtype, copy=False)

    def bw(g):
        gg = (g * xhat).sum(axis=axes) if gamma.requires_grad else None
        gb = g.sum(axis=axes) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gxhat = g * gamma.data.reshape(bshape)
            if mode == "train":
                gx = (inv_std.reshape(bshape) / count) * (
                    count * gxhat
                    - gxhat.sum(axis=axes).reshape(bshape)
                    - xhat * (gxhat * xhat).sum(axis=axes).reshape(bshape))
            else:
                gx = gxhat * inv_std.reshape(bshape)
        return gx, gg, gb

    return Tensor.from_op(out, (x, gamma, beta), bw, "batch_norm")


# ---------------------------------------------------------------------------
# losses


def _check_same(a: Tensor, b: Tensor, name: str):
    if a.shape != b.shape:
        raise ValueError(f"{name}: shape mismatch {a.shape} vs {b.shape}")


def mse(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    _check_same(a, b, "mse")
    diff = a.data - b.data
    n = diff.size
    out = np.asarray((diff * diff).mean(), dtype=a.dtype)

    def bw(g):
        base = (2.0 / n) * g * diff
        return (base.astype(a.dtype) if a.requires_grad else None,
                (-base).astype(b.dtype) if b.requires_grad else None)

    return Tensor.from_op(out, (a, b), bw, "mse")


def l1(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    _check_same(a, b, "l1")
    diff = a.data - b.data
    n = diff.size
    out = np.asarray(np.abs(diff).mean(), dtype=a.dtype)

    def bw(g):
        base = (g / n) * np.sign(diff)
        return (base.astype(a.dtype) if a.requires_grad else None,
                (-base).astype(b.dtype) if b.requires_grad else None)

    return Tensor.from_op(out, (a, b), bw, "l1")


__all__ = [
    "add", "sub", "mul", "sum", "mean", "reshape", "transpose", "concat", "broadcast_to", "take",
    "detach", "straight_through", "linear", "conv3d", "conv2d", "conv_transpose2d",
    "reduce_topk_max", "max_pool", "topk_indices", "relu", "leaky_relu", "sigmoid",
    "RunningStats", "batch_norm", "mse", "l1",
]
