"""Differentiable operations on :class:`Tensor`.

All ops are double precision, row-major, and return fresh arrays (no views
with stride arithmetic).  Convolution is cross-correlation (no kernel flip).
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, as_tensor, make_result


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        if len(v) != 2:
            raise ValueError(f"expected an int pair, got {v!r}")
        return int(v[0]), int(v[1])
    return int(v), int(v)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return make_result(a.data + b.data, "add", (a, b),
                       lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    return make_result(a.data - b.data, "sub", (a, b),
                       lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data
    return make_result(ad * bd, "mul", (a, b),
                       lambda g: (_unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)))


def abs_diff(a, b) -> Tensor:
    """|a - b| elementwise; subgradient 0 where a == b."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"abs_diff: shape mismatch {a.shape} vs {b.shape}")
    d = a.data - b.data
    s = np.sign(d)
    return make_result(np.abs(d), "abs_diff", (a, b), lambda g: (g * s, -g * s))


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul, "abs_diff": abs_diff}


def elementwise(a, b, op: str) -> Tensor:
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}; expected one of {sorted(_ELEMENTWISE)}") from None
    return fn(a, b)


def square(x: Tensor) -> Tensor:
    xd = x.data
    return make_result(xd * xd, "square", (x,), lambda g: (2.0 * xd * g,))


def sqrt(x: Tensor) -> Tensor:
    """Square root; gradient at exactly 0 is taken as 0 (subgradient)."""
    out = np.sqrt(x.data)

    def bw(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(out > 0, 0.5 / np.where(out > 0, out, 1.0), 0.0)
        return (g * d,)

    return make_result(out, "sqrt", (x,), bw)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result(x.data * mask, "relu", (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    xd = x.data
    out = np.empty_like(xd)
    pos = xd >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    e = np.exp(xd[~pos])
    out[~pos] = e / (1.0 + e)
    return make_result(out, "sigmoid", (x,), lambda g: (g * out * (1.0 - out),))


# ---------------------------------------------------------------- reductions

def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = x.shape
    return make_result(np.array(x.data.sum()), "sum", (x,),
                       lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size
    return make_result(np.array(x.data.mean()), "mean", (x,),
                       lambda g: (np.full(shape, np.reshape(g, ()) / n),))


# ---------------------------------------------------------------- shape ops

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    out = x.data.reshape(tuple(shape)).copy()
    return make_result(out, "reshape", (x,), lambda g: (g.reshape(old),))


def flatten(x: Tensor) -> Tensor:
    """(N, ...) -> (N, prod(...))."""
    return reshape(x, (x.shape[0], -1))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat needs at least one tensor")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(a != b for i, (a, b) in enumerate(zip(ref, t.shape)) if i != axis % len(ref)):
            raise ValueError(f"concat: non-axis extents differ: {ref} vs {t.shape} (axis {axis})")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)
    out = np.concatenate([t.data for t in tensors], axis=axis)

    def bw(g):
        idx = [slice(None)] * g.ndim
        parts = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[axis] = slice(lo, hi)
            parts.append(g[tuple(idx)])
        return tuple(parts)

    return make_result(out, "concat", tensors, bw)


def take(x: Tensor, start: int, stop: int, axis: int = 0) -> Tensor:
    """Contiguous slice [start, stop) along ``axis``."""
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    shape = x.shape

    def bw(g):
        full = np.zeros(shape)
        full[idx] = g
        return (full,)

    return make_result(x.data[idx], "take", (x,), bw)


# ---------------------------------------------------------------- dense layers

def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x (N, F) @ weight.T (F, G) + bias (G,)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ValueError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is not None:
        out = out + bias.data

    def bw(g):
        gx = g @ wd
        gw = g.T @ xd
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, "linear", parents, bw)


def _im2col(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int, oh: int, ow: int) -> np.ndarray:
    """Gather (C*KH*KW, N*OH*OW) patch columns from padded NCHW input."""
    n, c = xp.shape[:2]
    xt = xp.transpose(1, 0, 2, 3)
    cols = np.empty((c, kh, kw, n, oh, ow))
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xt[:, :, i:i + sh * oh:sh, j:j + sw * ow:sw]
    return cols.reshape(c * kh * kw, n * oh * ow)


def _correlate(xp: np.ndarray, wmat: np.ndarray, kh: int, kw: int, sh: int, sw: int):
    n, _, hp, wp = xp.shape
    oh = (hp - kh) // sh + 1
    ow = (wp - kw) // sw + 1
    cols = _im2col(xp, kh, kw, sh, sw, oh, ow)
    out = (wmat @ cols).reshape(wmat.shape[0], n, oh, ow).transpose(1, 0, 2, 3)
    return out, cols


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride=1, padding=0) -> Tensor:
    """2-D cross-correlation, NCHW input and OIHW kernel."""
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if sh < 1 or sw < 1 or ph < 0 or pw < 0:
        raise ValueError(f"conv2d: invalid stride {stride!r} or padding {padding!r}")
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"conv2d: input {x.shape} incompatible with kernel {weight.shape}")
    n, c, h, w = x.shape
    o, _, kh, kw = weight.shape
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (w + 2 * pw - kw) // sw + 1
    if oh < 1 or ow < 1:
        raise ValueError(f"conv2d: input {x.shape} too small for kernel {weight.shape} "
                         f"with padding {(ph, pw)}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    wmat = weight.data.reshape(o, c * kh * kw)
    out, cols = _correlate(xp, wmat, kh, kw, sh, sw)
    if bias is not None:
        out = out + bias.data.reshape(1, o, 1, 1)
    out = np.ascontiguousarray(out)

    def bw(g):
        gmat = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(o, n * oh * ow)
        gw = (gmat @ cols.T).reshape(weight.shape)
        hp, wp = h + 2 * ph, w + 2 * pw
        if sh == 1 and sw == 1:
            # full correlation of the output grad with the flipped kernel
            gd = np.pad(g, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
            wflip = weight.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(c, o * kh * kw)
            gxp, _ = _correlate(gd, wflip, kh, kw, 1, 1)
        else:
            gcols = (wmat.T @ gmat).reshape(c, kh, kw, n, oh, ow)
            gxt = np.zeros((c, n, hp, wp))
            for i in range(kh):
                for j in range(kw):
                    gxt[:, :, i:i + sh * oh:sh, j:j + sw * ow:sw] += gcols[:, i, j]
            gxp = gxt.transpose(1, 0, 2, 3)
        gx = gxp[:, :, ph:ph + h, pw:pw + w]
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, "conv2d", parents, bw)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor,
               running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, eps: float = 1e-5, momentum: float = 0.1) -> Tensor:
    """Per-channel normalisation for (N, C) or (N, C, H, W) input.

    Train mode normalises with batch statistics (biased variance) and updates
    ``running_mean``/``running_var`` in place (unbiased variance); eval mode
    uses the running statistics.
    """
    if eps <= 0:
        raise ValueError(f"batch_norm: eps must be positive, got {eps}")
    if x.ndim not in (2, 4):
        raise ValueError(f"batch_norm: expected rank 2 or 4 input, got shape {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"batch_norm: {c} input channels but params have shapes {gamma.shape}, {beta.shape}")
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    bshape = (1, c) if x.ndim == 2 else (1, c, 1, 1)
    xd = x.data
    gd = gamma.data.reshape(bshape)
    if training:
        m = xd.size // c
        mu = xd.mean(axis=axes, keepdims=True)
        xc = xd - mu
        var = (xc * xc).mean(axis=axes, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.reshape(c)
        unbiased = var.reshape(c) * (m / (m - 1) if m > 1 else 1.0)
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased

        def bw(g):
            gb = g.sum(axis=axes)
            gg = (g * xhat).sum(axis=axes)
            gxhat = g * gd
            gx = inv / m * (m * gxhat - gxhat.sum(axis=axes, keepdims=True)
                            - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True))
            return gx, gg, gb
    else:
        inv = 1.0 / np.sqrt(running_var.reshape(bshape) + eps)
        xhat = (xd - running_mean.reshape(bshape)) * inv

        def bw(g):
            return (g * gd * inv, (g * xhat).sum(axis=axes), g.sum(axis=axes))

    out = xhat * gd + beta.data.reshape(bshape)
    return make_result(out, "batch_norm", (x, gamma, beta), bw)


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors scaled by 1/(1-p) at train time, identity in eval."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs an explicit random generator")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return make_result(x.data * mask, "dropout", (x,), lambda g: (g * mask,))


# ---------------------------------------------------------------- pooling

def global_avg_pool(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, C, 1, 1)."""
    if x.ndim != 4:
        raise ValueError(f"global_avg_pool expects NCHW input, got {x.shape}")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)
    return make_result(out, "global_avg_pool", (x,),
                       lambda g: (np.broadcast_to(g / (h * w), x.shape).copy(),))


def _pool_windows(x: Tensor, window, stride):
    kh, kw = _pair(window)
    sh, sw = _pair(stride if stride is not None else window)
    if x.ndim != 4:
        raise ValueError(f"pooling expects NCHW input, got {x.shape}")
    n, c, h, w = x.shape
    if kh < 1 or kw < 1 or sh < 1 or sw < 1 or kh > h or kw > w:
        raise ValueError(f"invalid pooling window {(kh, kw)} / stride {(sh, sw)} for input {x.shape}")
    oh = (h - kh) // sh + 1
    ow = (w - kw) // sw + 1
    win = sliding_window_view(x.data, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw][:, :, :oh, :ow]
    return win, (kh, kw), (sh, sw), (oh, ow)


def max_pool2d(x: Tensor, window, stride=None) -> Tensor:
    win, (kh, kw), (sh, sw), (oh, ow) = _pool_windows(x, window, stride)
    flat = win.reshape(*win.shape[:4], kh * kw)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        gx = np.zeros(x.shape)
        for i in range(kh):
            for j in range(kw):
                hit = arg == i * kw + j
                gx[:, :, i:i + sh * oh:sh, j:j + sw * ow:sw] += g * hit
        return (gx,)

    return make_result(out, "max_pool2d", (x,), bw)


def avg_pool2d(x: Tensor, window, stride=None) -> Tensor:
    win, (kh, kw), (sh, sw), (oh, ow) = _pool_windows(x, window, stride)
    out = win.mean(axis=(-2, -1))
    scale = 1.0 / (kh * kw)

    def bw(g):
        gx = np.zeros(x.shape)
        gs = g * scale
        for i in range(kh):
            for j in range(kw):
                gx[:, :, i:i + sh * oh:sh, j:j + sw * ow:sw] += gs
        return (gx,)

    return make_result(out, "avg_pool2d", (x,), bw)


def pool(x: Tensor, kind: str, window=None, stride=None) -> Tensor:
    if kind == "global_avg":
        return global_avg_pool(x)
    if window is None:
        raise ValueError(f"{kind} pooling needs a window")
    if kind == "max":
        return max_pool2d(x, window, stride)
    if kind == "avg":
        return avg_pool2d(x, window, stride)
    raise ValueError(f"unknown pooling kind {kind!r}")


# ---------------------------------------------------------------- similarity

def cosine_similarity_channels(x: Tensor, y: Tensor, eps: float = 1e-12) -> Tensor:
    """Cosine similarity across the channel axis at every spatial position.

    (N, C, H, W) x2 -> (N, 1, H, W).  Positions where either norm is below
    ``eps`` map to 0 with zero gradient.
    """
    if x.shape != y.shape or x.ndim != 4:
        raise ValueError(f"cosine similarity needs matching NCHW inputs, got {x.shape} and {y.shape}")
    xd, yd = x.data, y.data
    dot = (xd * yd).sum(axis=1, keepdims=True)
    xx = (xd * xd).sum(axis=1, keepdims=True)
    yy = (yd * yd).sum(axis=1, keepdims=True)
    nx, ny = np.sqrt(xx), np.sqrt(yy)
    ok = (nx >= eps) & (ny >= eps)
    # sqrt of the product (not the product of roots) so identical inputs give exactly 1
    denom = np.where(ok, np.sqrt(xx * yy), 1.0)
    cs = np.where(ok, dot / denom, 0.0)
    # guard against rounding just outside [-1, 1]
    cs = np.clip(cs, -1.0, 1.0)

    def bw(g):
        g = np.where(ok, g, 0.0)
        nx2 = np.where(ok, nx * nx, 1.0)
        ny2 = np.where(ok, ny * ny, 1.0)
        gx = g * (yd / denom - cs * xd / nx2)
        gy = g * (xd / denom - cs * yd / ny2)
        return gx, gy

    return make_result(cs, "cosine_similarity", (x, y), bw)
