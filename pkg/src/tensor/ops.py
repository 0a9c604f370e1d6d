"""Elementwise, structural, pooling, resampling and activation operators."""
import math
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

from src.errors import ConfigError, ShapeError
from src.tensor.core import Tensor, record

Operand = Union[Tensor, np.ndarray, float, int]

ACTIVATIONS = ("relu", "sigmoid", "tanh", "identity")


def _lift(value: Operand, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


def _pair(a: Operand, b: Operand) -> Tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _lift(b, a)
    if isinstance(b, Tensor):
        return _lift(a, b), b
    raise TypeError("at least one operand must be a Tensor")


# ---------------------------------------------------------------------------
# elementwise arithmetic (numpy broadcasting, gradients un-broadcast by backward)
# ---------------------------------------------------------------------------

def add(a: Operand, b: Operand) -> Tensor:
    a, b = _pair(a, b)
    return record("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Operand, b: Operand) -> Tensor:
    a, b = _pair(a, b)
    return record("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Operand, b: Operand) -> Tensor:
    a, b = _pair(a, b)
    x, y = a.data, b.data
    return record("mul", x * y, (a, b), lambda g: (g * y, g * x))


def div(a: Operand, b: Operand) -> Tensor:
    a, b = _pair(a, b)
    x, y = a.data, b.data
    out = x / y
    return record("div", out, (a, b), lambda g: (g / y, -g * out / y))


def scale(x: Tensor, factor: float) -> Tensor:
    return record("scale", x.data * factor, (x,), lambda g: (g * factor,))


def add_scalar(x: Tensor, value: float) -> Tensor:
    return record("add_scalar", x.data + value, (x,), lambda g: (g,))


def square(x: Tensor) -> Tensor:
    data = x.data
    return record("square", data * data, (x,), lambda g: (2.0 * g * data,))


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(np.maximum(x.data, 0.0))

    def vjp(g: np.ndarray):
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, 0.5 * g / safe, 0.0),)

    return record("sqrt", out, (x,), vjp)


def clamp(x: Tensor, low: float, high: float) -> Tensor:
    data = x.data
    inside = (data >= low) & (data <= high)
    return record("clamp", np.clip(data, low, high), (x,), lambda g: (g * inside,))


def unary(
    x: Tensor,
    fn: Callable[[np.ndarray], np.ndarray],
    derivative: Callable[[np.ndarray], np.ndarray],
    name: str = "unary",
) -> Tensor:
    data = x.data
    return record(name, fn(data), (x,), lambda g: (g * derivative(data),))


def wrap_angle(x: Tensor) -> Tensor:
    """Map angle differences into (-pi, pi]; locally a shift, so gradients pass through."""
    data = x.data
    wrapped = data - 2.0 * math.pi * np.ceil((data - math.pi) / (2.0 * math.pi))
    return record("wrap_angle", wrapped, (x,), lambda g: (g,))


# ---------------------------------------------------------------------------
# reductions and structure
# ---------------------------------------------------------------------------

def mean(x: Tensor, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> Tensor:
    data = x.data
    out = data.mean(axis=axis, keepdims=keepdims)
    count = data.size // max(np.asarray(out).size, 1)

    def vjp(g: np.ndarray):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, data.shape).copy(),)

    return record("mean", np.asarray(out, dtype=data.dtype), (x,), vjp)


def sum_all(x: Tensor) -> Tensor:
    data = x.data
    return record(
        "sum", np.asarray(data.sum(), dtype=data.dtype), (x,),
        lambda g: (np.broadcast_to(g, data.shape).copy(),),
    )


def reshape(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    original = x.shape
    return record("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(original),))


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    n, c, h, w = x.dims
    if not 0 <= start <= stop <= c:
        raise ShapeError(f"channel slice [{start}, {stop}) out of range for shape {x.shape}")

    def vjp(g: np.ndarray):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        return (full,)

    return record("slice_channels", x.data[:, start:stop].copy(), (x,), vjp)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    na, ca, ha, wa = a.dims
    nb, cb, hb, wb = b.dims
    if (na, ha, wa) != (nb, hb, wb):
        raise ShapeError(f"concat_channels needs equal N, H, W; got {a.shape} and {b.shape}")
    out = np.concatenate([a.data, b.data.astype(a.dtype, copy=False)], axis=1)
    return record("concat_channels", out, (a, b), lambda g: (g[:, :ca], g[:, ca:]))


# ---------------------------------------------------------------------------
# pooling and resampling
# ---------------------------------------------------------------------------

def global_avg_pool(x: Tensor) -> Tensor:
    n, c, h, w = x.dims
    if h * w < 1:
        raise ShapeError(f"global_avg_pool needs a non-empty spatial extent, got {x.shape}")
    data = x.data
    out = data.mean(axis=(2, 3), keepdims=True)
    return record(
        "global_avg_pool", out, (x,),
        lambda g: (np.broadcast_to(g / (h * w), data.shape).copy(),),
    )


def downsample_max2(x: Tensor) -> Tensor:
    n, c, h, w = x.dims
    if h % 2 or w % 2:
        raise ShapeError(f"downsample_max2 needs even H and W, got {x.shape}")
    h2, w2 = h // 2, w // 2
    windows = x.data.reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
    index = windows.argmax(axis=-1)[..., None]
    out = np.take_along_axis(windows, index, axis=-1)[..., 0]

    def vjp(g: np.ndarray):
        routed = np.zeros((n, c, h2, w2, 4), dtype=g.dtype)
        np.put_along_axis(routed, index, g[..., None], axis=-1)
        return (routed.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w),)

    return record("downsample_max2", out, (x,), vjp)


def interpolation_matrix(source: int, target: int, dtype: np.dtype = np.float64) -> np.ndarray:
    """Corner-aligned 1-D linear interpolation weights, shape (target, source)."""
    if source < 1 or target < 1:
        raise ShapeError(f"interpolation needs positive sizes, got {source} -> {target}")
    matrix = np.zeros((target, source), dtype=np.float64)
    if source == 1 or target == 1:
        matrix[:, 0] = 1.0
        return matrix.astype(dtype)
    positions = np.arange(target, dtype=np.float64) * (source - 1) / (target - 1)
    lower = np.minimum(np.floor(positions).astype(int), source - 2)
    frac = positions - lower
    rows = np.arange(target)
    matrix[rows, lower] += 1.0 - frac
    matrix[rows, lower + 1] += frac
    return matrix.astype(dtype)


def upsample_bilinear2(x: Tensor) -> Tensor:
    n, c, h, w = x.dims
    rows = interpolation_matrix(h, 2 * h, x.dtype)
    cols = interpolation_matrix(w, 2 * w, x.dtype)
    out = np.matmul(np.matmul(rows, x.data), cols.T)
    return record(
        "upsample_bilinear2", out, (x,),
        lambda g: (np.matmul(np.matmul(rows.T, g), cols),),
    )


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def _sigmoid(data: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * data))


def activation(x: Tensor, kind: str) -> Tensor:
    data = x.data
    if kind == "relu":
        positive = data > 0
        return record("relu", np.where(positive, data, 0.0).astype(data.dtype), (x,), lambda g: (g * positive,))
    if kind == "sigmoid":
        out = _sigmoid(data)
        return record("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))
    if kind == "tanh":
        out = np.tanh(data)
        return record("tanh", out, (x,), lambda g: (g * (1.0 - out * out),))
    if kind == "identity":
        return record("identity", data, (x,), lambda g: (g,))
    raise ConfigError(f"unknown activation {kind!r}; expected one of {', '.join(ACTIVATIONS)}")


def stack_constant(values: Sequence[float], like: Tensor) -> Tensor:
    """Per-channel constant shaped (1, C, 1, 1) in the dtype of `like`."""
    return Tensor(np.asarray(values, dtype=like.dtype).reshape(1, -1, 1, 1))
