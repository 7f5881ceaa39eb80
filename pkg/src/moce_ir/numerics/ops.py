"""Differentiable operations on :class:`Tensor`.

Every op returns a new tensor and, when an input requires grad, records a
closure mapping the output gradient to input gradients. Image tensors use a
channels-last layout ``[..., H, W, C]``.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.special import ndtr

from .counters import add_macs
from .fft import fft_axes
from .tensor import Tensor, as_tensor, make_result


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


def fast_sum(x: np.ndarray, axes: tuple[int, ...], keepdims: bool = False) -> np.ndarray:
    """``x.sum(axes)`` routed through BLAS when ``axes`` is one contiguous run.

    numpy's strided reductions over short axes are an order of magnitude
    slower than a (batched) product with a ones vector.
    """
    nd = x.ndim
    axes = tuple(sorted(a % nd for a in axes))
    if not axes:
        return x
    lo, hi = axes[0], axes[-1] + 1
    if axes != tuple(range(lo, hi)) or hi - lo == nd:
        return x.sum(axis=axes, keepdims=keepdims)
    shape = x.shape
    red = int(np.prod(shape[lo:hi]))
    pre = int(np.prod(shape[:lo]))
    post = int(np.prod(shape[hi:]))
    if post == 1:
        out = x.reshape(pre, red) @ np.ones(red)
    else:
        out = np.matmul(np.ones(red), x.reshape(pre, red, post))
    if keepdims:
        return out.reshape(shape[:lo] + (1,) * (hi - lo) + shape[hi:])
    return out.reshape(shape[:lo] + shape[hi:])


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = fast_sum(g, tuple(range(extra)))
    keep = tuple(ax for ax, n in enumerate(shape) if n == 1 and g.shape[ax] != 1)
    if keep:
        g = fast_sum(g, keep, keepdims=True)
    return g


# -- elementwise arithmetic ---------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return make_result(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return make_result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_result(ad * bd, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        ga = _unbroadcast(g / bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), backward, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_result(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    if p == 2:
        return make_result(ad * ad, (a,), lambda g: (2.0 * g * ad,), "square")
    return make_result(ad**p, (a,), lambda g: (g * p * ad ** (p - 1),), "pow")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_result(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return make_result(np.log(ad), (a,), lambda g: (g / ad,), "log")


def sqrt(a) -> Tensor:
    """Square root; the gradient at exactly 0 is taken as 0."""
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def backward(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            gx = np.where(out > 0, g / (2.0 * np.where(out > 0, out, 1.0)), 0.0)
        return (gx,)

    return make_result(out, (a,), backward, "sqrt")


def abs(a) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    ad = a.data
    return make_result(np.abs(ad), (a,), lambda g: (g * np.sign(ad),), "abs")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make_result(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return make_result(a.data * mask, (a,), lambda g: (g * mask,), "relu")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a) -> Tensor:
    """Tanh-approximated GELU."""
    a = as_tensor(a)
    x = a.data
    x2 = x * x
    inner = _GELU_C * x * (1.0 + 0.044715 * x2)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return make_result(out, (a,), backward, "gelu")


def normal_cdf(a) -> Tensor:
    """Standard normal CDF, elementwise."""
    a = as_tensor(a)
    x = a.data
    return make_result(ndtr(x), (a,), lambda g: (g * np.exp(-0.5 * x * x) / math.sqrt(2 * math.pi),), "normal_cdf")


# -- reductions and shape algebra ---------------------------------------

def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    shape = a.shape
    axes = _norm_axes(axis, a.ndim)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return make_result(fast_sum(a.data, axes, keepdims), (a,), backward, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([shape[ax] for ax in axes])) if axes else 1

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, shape).copy(),)

    return make_result(fast_sum(a.data, axes, keepdims) / count, (a,), backward, "mean")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return make_result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return make_result(
        np.ascontiguousarray(a.data.transpose(axes)),
        (a,),
        lambda g: (np.ascontiguousarray(g.transpose(inv)),),
        "transpose",
    )


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    return make_result(
        np.ascontiguousarray(np.swapaxes(a.data, ax1, ax2)),
        (a,),
        lambda g: (np.ascontiguousarray(np.swapaxes(g, ax1, ax2)),),
        "swapaxes",
    )


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, type(None))) or i is Ellipsis for i in items)


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    basic = _is_basic_index(idx)

    def backward(g):
        gx = np.zeros(shape)
        if basic:
            gx[idx] = g
        else:
            np.add.at(gx, idx, g)
        return (gx,)

    # copy so downstream elementwise kernels see contiguous memory
    return make_result(np.ascontiguousarray(a.data[idx]), (a,), backward, "getitem")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_result(np.concatenate([t.data for t in ts], axis=axis), ts, backward, "concat")


def take(a, indices, axis: int = 0) -> Tensor:
    """Select entries along ``axis``; repeated indices accumulate gradient."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    shape = a.shape
    axis = axis % a.ndim

    def backward(g):
        gx = np.zeros(shape)
        sl = (slice(None),) * axis + (idx,)
        np.add.at(gx, sl, g)
        return (gx,)

    return make_result(np.take(a.data, idx, axis=axis), (a,), backward, "take")


def take_along_last(a, indices) -> Tensor:
    """``np.take_along_axis`` on the last axis of a 2-D tensor."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    if a.ndim != 2 or idx.ndim != 2 or idx.shape[0] != a.shape[0]:
        raise ShapeError(f"take_along_last expects 2-D operands, got {a.shape} and {idx.shape}")
    shape = a.shape
    rows = np.arange(shape[0])[:, None]

    def backward(g):
        gx = np.zeros(shape)
        np.add.at(gx, (np.broadcast_to(rows, idx.shape), idx), g)
        return (gx,)

    return make_result(np.take_along_axis(a.data, idx, axis=1), (a,), backward, "take_along_last")


# -- linear algebra -----------------------------------------------------

def matmul(a, b) -> Tensor:
    """Batched matrix product ``[..., M, K] @ [..., K, N]``.

    A 2-D right operand acts as a shared weight over all leading axes.
    """
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2 or ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {ad.shape} @ {bd.shape}")
    try:
        out = np.matmul(ad, bd)
    except ValueError as exc:
        raise ShapeError(f"matmul shape mismatch: {ad.shape} @ {bd.shape}") from exc
    add_macs(out.size * ad.shape[-1])

    def backward(g):
        ga = gb = None
        if bd.ndim == 2:
            if a.requires_grad:
                ga = g @ bd.T
            if b.requires_grad:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            if a.requires_grad:
                ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
            if b.requires_grad:
                gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return make_result(out, (a, b), backward, "matmul")


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight (+ bias)`` over the last axis with a 2-D weight."""
    if bias is None:
        return matmul(x, weight)
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    xd, wd = x.data, weight.data
    if wd.ndim != 2 or xd.shape[-1] != wd.shape[0] or bias.shape != (wd.shape[1],):
        raise ShapeError(f"linear shape mismatch: x {xd.shape}, weight {wd.shape}, bias {bias.shape}")
    out = (xd.reshape(-1, wd.shape[0]) @ wd + bias.data).reshape(*xd.shape[:-1], wd.shape[1])
    add_macs(out.size * wd.shape[0])

    def backward(g):
        g2 = g.reshape(-1, wd.shape[1])
        gx = (g2 @ wd.T).reshape(xd.shape) if x.requires_grad else None
        gw = xd.reshape(-1, wd.shape[0]).T @ g2 if weight.requires_grad else None
        gb = np.ones(g2.shape[0]) @ g2 if bias.requires_grad else None
        return gx, gw, gb

    return make_result(out, (x, weight, bias), backward, "linear")


def _im2col3x3(xd: np.ndarray) -> np.ndarray:
    *lead, h, w, c = xd.shape
    pad = [(0, 0)] * len(lead) + [(1, 1), (1, 1), (0, 0)]
    xp = np.pad(xd, pad)
    cols = [xp[..., dy:dy + h, dx:dx + w, :] for dy in range(3) for dx in range(3)]
    return np.concatenate(cols, axis=-1)


def conv2d_3x3(x, w, b) -> Tensor:
    """3x3 cross-correlation with zero padding 1, channels-last.

    x: ``[..., H, W, Cin]``, w: ``[3, 3, Cin, Cout]``, b: ``[Cout]``.
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    xd, wd = x.data, w.data
    if xd.ndim < 3 or wd.shape[:2] != (3, 3) or wd.shape[2] != xd.shape[-1] or b.shape != (wd.shape[3],):
        raise ShapeError(f"conv2d_3x3 shape mismatch: x {xd.shape}, w {wd.shape}, b {b.shape}")
    *lead, h, wid, cin = xd.shape
    if h < 3 or wid < 3:
        raise ShapeError(f"conv2d_3x3 needs H, W >= 3, got {h}x{wid}")
    cout = wd.shape[3]
    cols = _im2col3x3(xd)
    wmat = wd.reshape(9 * cin, cout)
    out = cols @ wmat + b.data
    add_macs(cols.size // (9 * cin) * 9 * cin * cout)

    def backward(g):
        gx = gw = gb = None
        if x.requires_grad:
            gcols = (g @ wmat.T).reshape(*lead, h, wid, 9, cin)
            gp = np.zeros((*lead, h + 2, wid + 2, cin))
            k = 0
            for dy in range(3):
                for dx in range(3):
                    gp[..., dy:dy + h, dx:dx + wid, :] += gcols[..., k, :]
                    k += 1
            gx = gp[..., 1:h + 1, 1:wid + 1, :]
        if w.requires_grad:
            gw = (cols.reshape(-1, 9 * cin).T @ g.reshape(-1, cout)).reshape(wd.shape)
        if b.requires_grad:
            gb = g.reshape(-1, cout).sum(axis=0)
        return gx, gw, gb

    return make_result(out, (x, w, b), backward, "conv2d_3x3")


# -- normalisation ------------------------------------------------------

def softmax(a) -> Tensor:
    """Max-stabilised softmax over the last axis."""
    a = as_tensor(a)
    if np.isnan(a.data).any():
        raise FloatingPointError("softmax received NaN input")
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / fast_sum(e, (-1,), keepdims=True)

    def backward(g):
        return (out * (g - fast_sum(g * out, (-1,), keepdims=True)),)

    return make_result(out, (a,), backward, "softmax")


def standardize(a, axis=-1, eps: float = 1e-6) -> Tensor:
    """Zero mean / unit variance over ``axis`` (population variance, ``eps`` inside the root)."""
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    x = a.data
    count = int(np.prod([x.shape[ax] for ax in axes]))

    def avg(t):
        return fast_sum(t, axes, keepdims=True) / count

    xc = x - avg(x)
    inv = 1.0 / np.sqrt(avg(xc * xc) + eps)
    y = xc * inv

    def backward(g):
        return (inv * (g - avg(g) - y * avg(g * y)),)

    return make_result(y, (a,), backward, "standardize")


def layernorm(x, gamma, beta, eps: float = 1e-6) -> Tensor:
    return add(mul(standardize(x, -1, eps), gamma), beta)


def l2_normalize(a, axis: int, eps: float = 1e-12) -> Tensor:
    """``a / sqrt(sum(a**2, axis) + eps)``."""
    a = as_tensor(a)
    x = a.data
    inv = 1.0 / np.sqrt(fast_sum(x * x, (axis,), keepdims=True) + eps)
    y = x * inv

    def backward(g):
        return (inv * (g - y * fast_sum(g * y, (axis,), keepdims=True)),)

    return make_result(y, (a,), backward, "l2_normalize")


def sobel_magnitude(a) -> Tensor:
    """Per-channel Sobel gradient magnitude on interior pixels.

    ``[..., H, W, C] -> [..., H-2, W-2, C]``; gradient taken as 0 where the
    magnitude is exactly 0.
    """
    a = as_tensor(a)
    x = a.data
    h, w = x.shape[-3], x.shape[-2]
    if h < 3 or w < 3:
        raise ShapeError(f"sobel needs H, W >= 3, got {x.shape}")

    def win(dy, dx):
        return x[..., dy:dy + h - 2, dx:dx + w - 2, :]

    gx = (win(0, 2) + 2.0 * win(1, 2) + win(2, 2)) - (win(0, 0) + 2.0 * win(1, 0) + win(2, 0))
    gy = (win(2, 0) + 2.0 * win(2, 1) + win(2, 2)) - (win(0, 0) + 2.0 * win(0, 1) + win(0, 2))
    mag = np.sqrt(gx * gx + gy * gy)

    def backward(g):
        safe = np.where(mag > 0, mag, 1.0)
        dx_ = np.where(mag > 0, g * gx / safe, 0.0)
        dy_ = np.where(mag > 0, g * gy / safe, 0.0)
        out = np.zeros(x.shape)
        # (dy, dx, weight on horizontal gradient, weight on vertical gradient)
        taps = [(0, 0, -1, -1), (0, 1, 0, -2), (0, 2, 1, -1), (1, 0, -2, 0),
                (1, 2, 2, 0), (2, 0, -1, 1), (2, 1, 0, 2), (2, 2, 1, 1)]
        for dy, dx, wx, wy in taps:
            out[..., dy:dy + h - 2, dx:dx + w - 2, :] += wx * dx_ + wy * dy_
        return (out,)

    return make_result(mag, (a,), backward, "sobel_magnitude")


# -- spectral -----------------------------------------------------------

def _axes_size(shape, axes) -> int:
    return int(np.prod([shape[ax] for ax in axes]))


def fft2_parts(a, axes=(-2, -1)) -> Tensor:
    """Differentiable 2-D DFT of a real tensor; real/imag stacked on a new last axis."""
    a = as_tensor(a)
    z = fft_axes(a.data, axes)
    out = np.stack([z.real, z.imag], axis=-1)
    n = _axes_size(a.shape, axes)

    def backward(g):
        gz = g[..., 0] + 1j * g[..., 1]
        return (n * fft_axes(gz, axes, inverse=True).real,)

    return make_result(out, (a,), backward, "fft2_parts")


def circular_correlate2d(q, k, axes=(-3, -2)) -> Tensor:
    """``A[t] = sum_s q[s] k[s - t]`` (indices mod extent) over ``axes``, via FFT.

    Computed as ``ifft2(fft2(q) * conj(fft2(k)))``; remaining axes are batched.
    """
    q, k = as_tensor(q), as_tensor(k)
    if q.shape != k.shape:
        raise ShapeError(f"correlation operands differ: {q.shape} vs {k.shape}")
    fq = fft_axes(q.data, axes)
    fk = fft_axes(k.data, axes)
    add_macs(4 * q.size)
    out = fft_axes(fq * np.conj(fk), axes, inverse=True).real

    def backward(g):
        fg = fft_axes(g, axes)
        gq = fft_axes(fg * fk, axes, inverse=True).real if q.requires_grad else None
        gk = fft_axes(fq * np.conj(fg), axes, inverse=True).real if k.requires_grad else None
        return gq, gk

    return make_result(out, (q, k), backward, "circular_correlate2d")
