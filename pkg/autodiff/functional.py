# autodiff/functional.py

import logging
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from autodiff.errors import ShapeMismatchError
from autodiff.tensor import (
    Tensor,
    TensorLike,
    _make,
    as_tensor,
    exp,
    getitem,
    log,
    mul,
    reduce,
    sqrt,
    stack,
    stop_gradient,
)

logger = logging.getLogger(__name__)

PadWidth = Sequence[Tuple[int, int]]


# --- Padding and windows ---

def pad(x: TensorLike, pad_width: PadWidth, mode: str = "constant") -> Tensor:
    """
    Pad ``x`` per axis. ``reflect`` and ``edge`` are expressed as an index
    gather so their gradient is the matching scatter-add.
    """
    x = as_tensor(x)
    pad_width = [tuple(int(v) for v in p) for p in pad_width]
    if len(pad_width) != x.ndim:
        raise ShapeMismatchError(f"pad widths {pad_width} do not match tensor rank {x.ndim}")

    if mode == "constant":
        out = np.pad(x.data, pad_width, mode="constant")
        inner = tuple(slice(b, b + n) for (b, _), n in zip(pad_width, x.shape))
        return _make("pad", out, (x,), lambda g: (g[inner],))

    if mode not in ("reflect", "edge"):
        raise ValueError(f"unsupported pad mode '{mode}'")
    for (before, after), n in zip(pad_width, x.shape):
        if mode == "reflect" and max(before, after) >= n:
            raise ShapeMismatchError(f"reflect padding {before, after} needs an axis longer than {n}")
    index = np.ix_(*[np.pad(np.arange(n), p, mode=mode) for n, p in zip(x.shape, pad_width)])
    return getitem(x, index)


def window_mean(x: TensorLike, size: int) -> Tensor:
    """Mean over every fully contained ``size``×``size`` window of an (H, W, C) tensor."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeMismatchError(f"window_mean expects (H, W, C), got {x.shape}")
    h, w, _ = x.shape
    if size > h or size > w:
        raise ShapeMismatchError(f"window {size} does not fit in a {h}x{w} image")
    windows = sliding_window_view(x.data, (size, size), axis=(0, 1))
    out = windows.mean(axis=(-2, -1))
    ho, wo = out.shape[:2]
    area = float(size * size)

    def vjp(g):
        full = np.zeros(x.shape)
        scaled = g / area
        for i in range(size):
            for j in range(size):
                full[i:i + ho, j:j + wo] += scaled
        return (full,)

    return _make("window_mean", out, (x,), vjp)


# --- Convolution ---

def conv2d(x: TensorLike, weight: TensorLike, bias: Optional[TensorLike] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """
    2D cross-correlation of an (H, W, Cin) map with (k, k, Cin, Cout) weights.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 4:
        raise ShapeMismatchError(f"conv2d expects (H, W, Cin) and (k, k, Cin, Cout), got {x.shape} and {weight.shape}")
    k = weight.shape[0]
    if weight.shape[1] != k or weight.shape[2] != x.shape[2]:
        raise ShapeMismatchError(f"conv2d weight {weight.shape} incompatible with input {x.shape}")

    xp = np.pad(x.data, ((padding, padding), (padding, padding), (0, 0))) if padding else x.data
    if xp.shape[0] < k or xp.shape[1] < k:
        raise ShapeMismatchError(f"kernel {k} larger than padded input {xp.shape[:2]}")
    windows = sliding_window_view(xp, (k, k), axis=(0, 1))[::stride, ::stride]
    w = weight.data
    out = np.tensordot(windows, w, axes=([2, 3, 4], [2, 0, 1]))
    ho, wo = out.shape[:2]

    def vjp(g):
        dw = np.tensordot(windows, g, axes=([0, 1], [0, 1])).transpose(1, 2, 0, 3)
        dxp = np.zeros(xp.shape)
        span_h = stride * (ho - 1) + 1
        span_w = stride * (wo - 1) + 1
        for i in range(k):
            for j in range(k):
                dxp[i:i + span_h:stride, j:j + span_w:stride] += g @ w[i, j].T
        if padding:
            dxp = dxp[padding:-padding, padding:-padding]
        return (dxp, dw)

    result = _make("conv2d", out, (x, weight), vjp)
    if bias is not None:
        result = result + bias
    return result


def upsample_nearest(x: TensorLike, factor: int) -> Tensor:
    x = as_tensor(x)
    if factor == 1:
        return x
    h, w, c = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=0), factor, axis=1)
    return _make(
        "upsample_nearest",
        out,
        (x,),
        lambda g: (g.reshape(h, factor, w, factor, c).sum(axis=(1, 3)),),
    )


# --- Composite helpers ---

def log_softmax(x: TensorLike, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x - stop_gradient(reduce("max", x, axis, keepdims=True))
    return shifted - log(reduce("sum", exp(shifted), axis, keepdims=True))


def dot(a: TensorLike, b: TensorLike, axis: int = -1, keepdims: bool = False) -> Tensor:
    return reduce("sum", mul(a, b), axis, keepdims)


def norm(a: TensorLike, axis: int = -1, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    return sqrt(reduce("sum", a * a, axis, keepdims))


def cross(a: TensorLike, b: TensorLike) -> Tensor:
    """Cross product over a trailing axis of length 3."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != 3 or b.shape[-1] != 3:
        raise ShapeMismatchError(f"cross expects trailing extent 3, got {a.shape} and {b.shape}")
    ax, ay, az = (getitem(a, (Ellipsis, i)) for i in range(3))
    bx, by, bz = (getitem(b, (Ellipsis, i)) for i in range(3))
    return stack([ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx], axis=-1)


def masked_mean(values: TensorLike, mask: Union[np.ndarray, TensorLike]) -> Tuple[Tensor, int]:
    """
    Mean of ``values`` over the entries where the constant ``mask`` is set.
    Returns the mean and the number of contributing entries; an empty mask
    gives a zero tensor.
    """
    values = as_tensor(values)
    weights = np.broadcast_to(np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=np.float64), values.shape)
    count = int(np.count_nonzero(weights))
    if count == 0:
        return reduce("sum", values * 0.0), 0
    return reduce("sum", values * weights) / float(count), count
