"""
Composite training objective: RGB, LAB and LCH mean squared errors, windowed
SSIM and an optional perceptual term over a loaded feature network.

Every term consumes [0,1] images; `total_loss` maps network outputs from
[-1,1] internally.
"""
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from src.errors import ConfigError, MissingTensorError, ShapeError
from src.model.checkpoint import read_tensors
from src.schemas import LossConfig, LossReport
from src.services.color_space import ColorSpace, ColorTensor, lab_to_lch, srgb_to_lab
from src.tensor import (
    ConvSpec,
    Tensor,
    activation,
    add,
    add_scalar,
    clamp,
    concat_channels,
    conv2d,
    div,
    mean,
    mul,
    reshape,
    scale,
    slice_channels,
    square,
    sub,
    sum_all,
    wrap_angle,
)
from src.tensor.ops import stack_constant

logger = logging.getLogger(__name__)


def _check_pair(pred: Tensor, target: Tensor) -> None:
    if pred.shape != target.shape:
        raise ShapeError(f"loss inputs differ in shape: {pred.shape} vs {target.shape}")
    if pred.ndim != 4:
        raise ShapeError(f"loss inputs must be N×C×H×W, got {pred.shape}")


def to_unit_range(x: Tensor) -> Tensor:
    """[-1,1] network range to [0,1] image range, clamped."""
    return clamp(scale(add_scalar(x, 1.0), 0.5), 0.0, 1.0)


def mse_rgb(pred: Tensor, target: Tensor) -> Tensor:
    _check_pair(pred, target)
    return mean(square(sub(pred, target)))


def _channel_mse(diff: Tensor, factors: Sequence[float]) -> Tensor:
    scaled = mul(diff, stack_constant(factors, diff))
    return sum_all(mean(square(scaled), axis=(0, 2, 3)))


def mse_lab(pred: Tensor, target: Tensor, cfg: Optional[LossConfig] = None) -> Tensor:
    """Sum over L, a, b of the per-channel mean squared scaled difference."""
    _check_pair(pred, target)
    cfg = cfg or LossConfig()
    lab_p = srgb_to_lab(ColorTensor(pred, ColorSpace.SRGB01)).tensor
    lab_t = srgb_to_lab(ColorTensor(target, ColorSpace.SRGB01)).tensor
    return _channel_mse(sub(lab_p, lab_t), cfg.lab_scale)


def mse_lch(pred: Tensor, target: Tensor, cfg: Optional[LossConfig] = None) -> Tensor:
    """As mse_lab in LCH; the hue difference is wrapped onto the circle first."""
    _check_pair(pred, target)
    cfg = cfg or LossConfig()
    lch_p = lab_to_lch(srgb_to_lab(ColorTensor(pred, ColorSpace.SRGB01))).tensor
    lch_t = lab_to_lch(srgb_to_lab(ColorTensor(target, ColorSpace.SRGB01))).tensor
    diff = sub(lch_p, lch_t)
    hue = wrap_angle(slice_channels(diff, 2, 3))
    diff = concat_channels(slice_channels(diff, 0, 2), hue)
    return _channel_mse(diff, cfg.lch_scale)


# ---------------------------------------------------------------------------
# windowed SSIM, shared with the metrics module
# ---------------------------------------------------------------------------

def gaussian_window(size: int, sigma: float) -> np.ndarray:
    offsets = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    taps = np.exp(-(offsets ** 2) / (2.0 * sigma * sigma))
    return taps / taps.sum()


def _blur(x: Tensor, window: np.ndarray) -> Tensor:
    size = window.size
    taps_w = Tensor(window.reshape(1, 1, 1, size).astype(x.dtype))
    taps_h = Tensor(window.reshape(1, 1, size, 1).astype(x.dtype))
    x = conv2d(x, taps_w, None, ConvSpec(1, 1, 1, size, has_bias=False))
    return conv2d(x, taps_h, None, ConvSpec(1, 1, size, 1, has_bias=False))


def ssim_map(pred: Tensor, target: Tensor, cfg: Optional[LossConfig] = None) -> Tensor:
    """
    Per-pixel SSIM over valid gaussian windows, each channel treated as its own
    image. Returns an (N*C)×1×H'×W' tensor with H' = H - window + 1.
    """
    _check_pair(pred, target)
    cfg = cfg or LossConfig()
    n, c, h, w = pred.dims
    if h < cfg.ssim_window or w < cfg.ssim_window:
        raise ConfigError(f"image {h}x{w} is smaller than the {cfg.ssim_window}x{cfg.ssim_window} SSIM window")
    window = gaussian_window(cfg.ssim_window, cfg.ssim_sigma)
    c1 = (cfg.ssim_k1 * cfg.ssim_data_range) ** 2
    c2 = (cfg.ssim_k2 * cfg.ssim_data_range) ** 2

    x = reshape(pred, (n * c, 1, h, w))
    y = reshape(target, (n * c, 1, h, w))
    mu_x = _blur(x, window)
    mu_y = _blur(y, window)
    mu_xx = square(mu_x)
    mu_yy = square(mu_y)
    mu_xy = mul(mu_x, mu_y)
    var_x = sub(_blur(square(x), window), mu_xx)
    var_y = sub(_blur(square(y), window), mu_yy)
    cov = sub(_blur(mul(x, y), window), mu_xy)

    numerator = mul(add_scalar(scale(mu_xy, 2.0), c1), add_scalar(scale(cov, 2.0), c2))
    denominator = mul(add_scalar(add(mu_xx, mu_yy), c1), add_scalar(add(var_x, var_y), c2))
    return div(numerator, denominator)


def ssim(pred: Tensor, target: Tensor, cfg: Optional[LossConfig] = None) -> Tensor:
    return mean(ssim_map(pred, target, cfg))


def ssim_loss(pred: Tensor, target: Tensor, cfg: Optional[LossConfig] = None) -> Tensor:
    return add_scalar(scale(ssim(pred, target, cfg), -1.0), 1.0)


# ---------------------------------------------------------------------------
# perceptual term
# ---------------------------------------------------------------------------

class FeatureExtractor:
    """
    Frozen stack of 3x3 conv + relu layers read from a checkpoint holding
    `features.{i}.weight` / `features.{i}.bias`. Tap 0 is the raw input,
    tap i the output of layer i.
    """

    def __init__(self, layers: List[Tuple[np.ndarray, np.ndarray]], taps: Sequence[int]):
        if not all(0 <= tap <= len(layers) for tap in taps):
            raise ConfigError(f"feature taps {list(taps)} outside 0..{len(layers)}")
        if not taps:
            raise ConfigError("at least one feature tap is required")
        self.layers = [
            (Tensor(weight, name=f"features.{i}.weight"), Tensor(bias, name=f"features.{i}.bias"))
            for i, (weight, bias) in enumerate(layers)
        ]
        self.taps = sorted(set(taps))

    @classmethod
    def load(cls, path: Union[str, Path], taps: Sequence[int]) -> "FeatureExtractor":
        tensors = read_tensors(path)
        layers = []
        index = 0
        while f"features.{index}.weight" in tensors:
            bias = tensors.get(f"features.{index}.bias")
            if bias is None:
                raise MissingTensorError(f"{path}: missing tensor 'features.{index}.bias'")
            layers.append((tensors[f"features.{index}.weight"], bias))
            index += 1
        if not layers:
            raise ConfigError(f"{path} holds no features.0.weight tensor")
        logger.info(f"Loaded {len(layers)}-layer feature extractor from {path}")
        return cls(layers, taps)

    def features(self, x: Tensor) -> List[Tensor]:
        outputs = [x] if 0 in self.taps else []
        last = max(self.taps)
        for i, (weight, bias) in enumerate(self.layers[:last]):
            c_out, c_in, kh, kw = weight.shape
            spec = ConvSpec(c_in, c_out, kh, kw, padding=kh // 2)
            x = activation(conv2d(x, weight, bias, spec), "relu")
            if i + 1 in self.taps:
                outputs.append(x)
        return outputs


def perceptual_loss(pred: Tensor, target: Tensor, extractor: Optional[FeatureExtractor]) -> Tensor:
    if extractor is None:
        raise ConfigError(
            "perceptual term enabled without a feature extractor; set loss.vgg_weights "
            "to a checkpoint with features.{i}.weight/bias tensors or disable loss.use_vgg"
        )
    _check_pair(pred, target)
    pairs = zip(extractor.features(pred), extractor.features(target))
    terms = [mean(square(sub(fp, ft))) for fp, ft in pairs]
    total = terms[0]
    for term in terms[1:]:
        total = add(total, term)
    return scale(total, 1.0 / len(terms))


def total_loss(
    pred: Tensor,
    target: Tensor,
    cfg: Optional[LossConfig] = None,
    extractor: Optional[FeatureExtractor] = None,
) -> Tuple[LossReport, Tensor]:
    """
    Weighted sum of the enabled terms on [-1,1] inputs.

    The report holds each weighted term, so `total` is exactly the sum of the
    present fields. The returned tensor is the differentiable total.
    """
    cfg = cfg or LossConfig()
    _check_pair(pred, target)
    p = to_unit_range(pred)
    t = to_unit_range(target)

    terms = []
    if cfg.use_rgb:
        terms.append(("l_rgb", cfg.rgb_weight, lambda: mse_rgb(p, t)))
    if cfg.use_lab:
        terms.append(("l_lab", cfg.lab_weight, lambda: mse_lab(p, t, cfg)))
    if cfg.use_lch:
        terms.append(("l_lch", cfg.lch_weight, lambda: mse_lch(p, t, cfg)))
    if cfg.use_ssim:
        terms.append(("l_ssim", cfg.ssim_weight, lambda: ssim_loss(p, t, cfg)))
    if cfg.use_vgg:
        terms.append(("l_vgg", cfg.vgg_weight, lambda: perceptual_loss(p, t, extractor)))

    values = {}
    total = Tensor(np.zeros((), dtype=pred.dtype))
    for name, weight, compute in terms:
        term = scale(compute(), weight)
        values[name] = max(term.item(), 0.0)
        total = add(total, term)
    report = LossReport(**values, total=sum(values.values()))
    return report, total
