"""
Convolution operators: general direct cross-correlation, the axial depthwise
pair with its identity residual, and the pointwise (1×1) channel mixer.

All of them use zero padding and no kernel flip.
"""
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.errors import ConfigError, ShapeError
from src.tensor.core import Tensor, record
from src.tensor.parallel import run_chunked


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: int = 0
    has_bias: bool = True

    def validate(self) -> None:
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise ConfigError(f"padding must be >= 0, got {self.padding}")
        if self.kernel_h < 1 or self.kernel_w < 1:
            raise ConfigError(f"kernel dims must be >= 1, got {self.kernel_h}x{self.kernel_w}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError(f"channel counts must be >= 1, got {self.in_channels}->{self.out_channels}")

    def output_size(self, height: int, width: int) -> Tuple[int, int]:
        out_h = (height + 2 * self.padding - self.kernel_h) // self.stride + 1
        out_w = (width + 2 * self.padding - self.kernel_w) // self.stride + 1
        if out_h < 1 or out_w < 1:
            raise ConfigError(
                f"conv {self.kernel_h}x{self.kernel_w}/s{self.stride}/p{self.padding} "
                f"on {height}x{width} gives non-positive output {out_h}x{out_w}"
            )
        return out_h, out_w

    @property
    def weight_shape(self) -> Tuple[int, int, int, int]:
        return self.out_channels, self.in_channels, self.kernel_h, self.kernel_w


def _pad_spatial(data: np.ndarray, pad_h: int, pad_w: int) -> np.ndarray:
    if pad_h == 0 and pad_w == 0:
        return data
    return np.pad(data, ((0, 0), (0, 0), (pad_h, pad_h), (pad_w, pad_w)))


def _im2col(padded: np.ndarray, kh: int, kw: int, stride: int, out_h: int, out_w: int) -> np.ndarray:
    windows = sliding_window_view(padded, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride][:, :, :out_h, :out_w]
    n, c = padded.shape[:2]
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * out_h * out_w, c * kh * kw)


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor], spec: ConvSpec) -> Tensor:
    spec.validate()
    n, c, h, w = x.dims
    if c != spec.in_channels:
        raise ShapeError(f"conv2d input {x.shape} has {c} channels, spec expects {spec.in_channels}")
    if weight.shape != spec.weight_shape:
        raise ShapeError(f"conv2d weight {weight.shape} does not match {spec.weight_shape} (input {x.shape})")
    if spec.has_bias and (bias is None or bias.shape != (spec.out_channels,)):
        shape = None if bias is None else bias.shape
        raise ShapeError(f"conv2d bias {shape} does not match ({spec.out_channels},)")
    out_h, out_w = spec.output_size(h, w)
    kh, kw, s, p = spec.kernel_h, spec.kernel_w, spec.stride, spec.padding

    padded = _pad_spatial(x.data, p, p)
    rows = _im2col(padded, kh, kw, s, out_h, out_w)
    kernel = weight.data.reshape(spec.out_channels, -1).astype(x.dtype, copy=False)
    flat = np.empty((rows.shape[0], spec.out_channels), dtype=x.dtype)

    def work(start: int, stop: int) -> None:
        np.matmul(rows[start:stop], kernel.T, out=flat[start:stop])

    run_chunked(rows.shape[0], work)
    if spec.has_bias:
        flat += bias.data
    out = np.ascontiguousarray(flat.reshape(n, out_h, out_w, spec.out_channels).transpose(0, 3, 1, 2))

    def vjp(g: np.ndarray):
        g_flat = g.transpose(0, 2, 3, 1).reshape(-1, spec.out_channels)
        grad_weight = (g_flat.T @ rows).reshape(weight.shape)
        grad_bias = g_flat.sum(axis=0) if spec.has_bias else None
        grad_cols = (g_flat @ kernel).reshape(n, out_h, out_w, c, kh, kw)
        grad_padded = np.zeros_like(padded)
        for i in range(kh):
            for j in range(kw):
                grad_padded[:, :, i:i + s * (out_h - 1) + 1:s, j:j + s * (out_w - 1) + 1:s] += (
                    grad_cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                )
        grad_x = grad_padded[:, :, p:p + h, p:p + w]
        return grad_x, grad_weight, grad_bias

    inputs = (x, weight, bias) if spec.has_bias else (x, weight)
    return record("conv2d", out, inputs, vjp)


def axial_depthwise(x: Tensor, h_weight: Tensor, v_weight: Tensor) -> Tensor:
    """
    Per-channel horizontal 1×k plus vertical k×1 convolution plus the input.

    h_weight is (C, 1, 1, k), v_weight is (C, 1, k, 1); padding (k-1)/2 keeps
    H×W, and channel i of the output only reads channel i of the input.
    """
    n, c, h, w = x.dims
    if h_weight.ndim != 4 or h_weight.shape[0] != c or h_weight.shape[1:3] != (1, 1):
        raise ShapeError(f"horizontal kernels {h_weight.shape} do not match {c} channels of {x.shape}")
    k = h_weight.shape[3]
    if v_weight.shape != (c, 1, k, 1):
        raise ShapeError(f"vertical kernels {v_weight.shape} do not match ({c}, 1, {k}, 1)")
    if k % 2 == 0:
        raise ConfigError(f"axial kernel size must be odd, got {k}")
    p = k // 2
    data = x.data
    taps_h = h_weight.data.reshape(c, k).astype(x.dtype, copy=False)
    taps_v = v_weight.data.reshape(c, k).astype(x.dtype, copy=False)
    padded_w = _pad_spatial(data, 0, p)
    padded_h = _pad_spatial(data, p, 0)
    hconv = np.zeros_like(data)
    vconv = np.zeros_like(data)

    def work(start: int, stop: int) -> None:
        for t in range(k):
            hconv[:, start:stop] += taps_h[start:stop, t, None, None] * padded_w[:, start:stop, :, t:t + w]
            vconv[:, start:stop] += taps_v[start:stop, t, None, None] * padded_h[:, start:stop, t:t + h, :]

    run_chunked(c, work)
    out = hconv + vconv + data

    def vjp(g: np.ndarray):
        grad_padded_w = np.zeros_like(padded_w)
        grad_padded_h = np.zeros_like(padded_h)
        grad_h = np.empty((c, k), dtype=g.dtype)
        grad_v = np.empty((c, k), dtype=g.dtype)
        for t in range(k):
            grad_padded_w[:, :, :, t:t + w] += taps_h[None, :, t, None, None] * g
            grad_padded_h[:, :, t:t + h, :] += taps_v[None, :, t, None, None] * g
            grad_h[:, t] = np.einsum("nchw,nchw->c", g, padded_w[:, :, :, t:t + w])
            grad_v[:, t] = np.einsum("nchw,nchw->c", g, padded_h[:, :, t:t + h, :])
        grad_x = g + grad_padded_w[:, :, :, p:p + w] + grad_padded_h[:, :, p:p + h, :]
        return grad_x, grad_h.reshape(h_weight.shape), grad_v.reshape(v_weight.shape)

    return record("axial_depthwise", out, (x, h_weight, v_weight), vjp)


def pointwise(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    n, c, h, w = x.dims
    if weight.ndim != 2 or weight.shape[1] != c:
        raise ShapeError(f"pointwise weight {weight.shape} does not mix {c} channels of {x.shape}")
    c_out = weight.shape[0]
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"pointwise bias {bias.shape} does not match ({c_out},)")
    flat = x.data.reshape(n, c, h * w)
    matrix = weight.data.astype(x.dtype, copy=False)
    out = np.empty((n, c_out, h * w), dtype=x.dtype)

    def work(start: int, stop: int) -> None:
        np.matmul(matrix, flat[:, :, start:stop], out=out[:, :, start:stop])

    run_chunked(h * w, work)
    if bias is not None:
        out += bias.data[None, :, None]

    def vjp(g: np.ndarray):
        g_flat = g.reshape(n, c_out, h * w)
        grad_x = np.matmul(matrix.T, g_flat).reshape(n, c, h, w)
        grad_w = np.matmul(g_flat, flat.transpose(0, 2, 1)).sum(axis=0)
        grad_b = g_flat.sum(axis=(0, 2)) if bias is not None else None
        return grad_x, grad_w, grad_b

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    return record("pointwise", out.reshape(n, c_out, h, w), inputs, vjp)
