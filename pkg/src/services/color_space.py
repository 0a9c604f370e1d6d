import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from src.errors import ColorSpaceError, ShapeError
from src.tensor import Tensor, clamp, no_grad, pointwise, unary
from src.tensor.core import record

logger = logging.getLogger(__name__)

# sRGB primaries, D65 white (IEC 61966-2-1)
SRGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
D65_WHITE = SRGB_TO_XYZ.sum(axis=1)
# rows divided by the white point: RGB white lands on X/Xn = Y/Yn = Z/Zn = 1
SRGB_TO_XYZ_WHITE = SRGB_TO_XYZ / D65_WHITE[:, None]
XYZ_WHITE_TO_SRGB = np.linalg.inv(SRGB_TO_XYZ_WHITE)

F_TO_LAB = np.array([[0.0, 116.0, 0.0], [500.0, -500.0, 0.0], [0.0, 200.0, -200.0]])
F_TO_LAB_BIAS = np.array([-16.0, 0.0, 0.0])

GAMMA_BREAK = 0.04045
LINEAR_BREAK = 0.0031308
DELTA = 6.0 / 29.0
CUBE_BREAK = DELTA ** 3
CHROMA_EPS = 1e-6


class ColorSpace(str, Enum):
    SRGB01 = "srgb01"
    LAB = "lab"
    LCH = "lch"


@dataclass(frozen=True)
class ColorTensor:
    tensor: Tensor
    space: ColorSpace
    out_of_gamut: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if self.tensor.ndim != 4 or self.tensor.shape[1] != 3:
            raise ShapeError(f"color tensors are N×3×H×W, got {self.tensor.shape}")


def _require(x: ColorTensor, space: ColorSpace, op: str) -> None:
    if x.space is not space:
        raise ColorSpaceError(f"{op} expects a {space.value} tensor, got {x.space.value}")


def _gamma_expand(c: np.ndarray) -> np.ndarray:
    return np.where(c >= GAMMA_BREAK, ((c + 0.055) / 1.055) ** 2.4, c / 12.92)


def _gamma_expand_grad(c: np.ndarray) -> np.ndarray:
    return np.where(c >= GAMMA_BREAK, (2.4 / 1.055) * ((c + 0.055) / 1.055) ** 1.4, 1.0 / 12.92)


def _gamma_compress(c: np.ndarray) -> np.ndarray:
    return np.where(c > LINEAR_BREAK, 1.055 * np.power(np.maximum(c, LINEAR_BREAK), 1.0 / 2.4) - 0.055, 12.92 * c)


def _lab_f(t: np.ndarray) -> np.ndarray:
    return np.where(t >= CUBE_BREAK, np.cbrt(t), t / (3.0 * DELTA ** 2) + 4.0 / 29.0)


def _lab_f_grad(t: np.ndarray) -> np.ndarray:
    safe = np.maximum(t, CUBE_BREAK)
    return np.where(t >= CUBE_BREAK, 1.0 / (3.0 * np.cbrt(safe) ** 2), 1.0 / (3.0 * DELTA ** 2))


def _lab_f_inverse(f: np.ndarray) -> np.ndarray:
    return np.where(f > DELTA, f ** 3, 3.0 * DELTA ** 2 * (f - 4.0 / 29.0))


def srgb_to_lab(x: ColorTensor) -> ColorTensor:
    """sRGB in [0,1] → gamma expansion → XYZ/white → CIELAB, differentiable."""
    _require(x, ColorSpace.SRGB01, "srgb_to_lab")
    rgb = clamp(x.tensor, 0.0, 1.0)
    linear = unary(rgb, _gamma_expand, _gamma_expand_grad, name="gamma_expand")
    dtype = x.tensor.dtype
    xyz = pointwise(linear, Tensor(SRGB_TO_XYZ_WHITE.astype(dtype)))
    f = unary(xyz, _lab_f, _lab_f_grad, name="lab_f")
    lab = pointwise(f, Tensor(F_TO_LAB.astype(dtype)), Tensor(F_TO_LAB_BIAS.astype(dtype)))
    return ColorTensor(lab, ColorSpace.LAB)


def lab_to_srgb(x: ColorTensor) -> ColorTensor:
    """Inverse pipeline for verification; out-of-gamut pixels are clamped and flagged."""
    _require(x, ColorSpace.LAB, "lab_to_srgb")
    lab = x.tensor.data.astype(np.float64)
    fy = (lab[:, 0] + 16.0) / 116.0
    fx = fy + lab[:, 1] / 500.0
    fz = fy - lab[:, 2] / 200.0
    xyz = np.stack([_lab_f_inverse(fx), _lab_f_inverse(fy), _lab_f_inverse(fz)], axis=1)
    linear = np.einsum("ij,njhw->nihw", XYZ_WHITE_TO_SRGB, xyz)
    rgb = _gamma_compress(linear)
    tolerance = 1e-9
    flagged = np.any((rgb < -tolerance) | (rgb > 1.0 + tolerance), axis=1)
    if flagged.any():
        logger.debug(f"lab_to_srgb clamped {int(flagged.sum())} out-of-gamut pixels")
    rgb = np.clip(rgb, 0.0, 1.0).astype(x.tensor.dtype)
    return ColorTensor(Tensor(rgb), ColorSpace.SRGB01, out_of_gamut=flagged)


def lab_to_lch(x: ColorTensor) -> ColorTensor:
    """L passes through; C = |(a, b)|; H = atan2(b, a), pinned to 0 below CHROMA_EPS."""
    _require(x, ColorSpace.LAB, "lab_to_lch")
    lab = x.tensor
    light, a, b = lab.data[:, 0], lab.data[:, 1], lab.data[:, 2]
    chroma = np.sqrt(a * a + b * b)
    colored = chroma >= CHROMA_EPS
    safe = np.where(colored, chroma, 1.0)
    hue = np.where(colored, np.arctan2(b, a), 0.0)
    out = np.stack([light, chroma, hue], axis=1).astype(lab.dtype)

    def vjp(g: np.ndarray):
        g_l, g_c, g_h = g[:, 0], g[:, 1], g[:, 2]
        grad_a = np.where(colored, g_c * a / safe - g_h * b / (safe * safe), 0.0)
        grad_b = np.where(colored, g_c * b / safe + g_h * a / (safe * safe), 0.0)
        return (np.stack([g_l, grad_a, grad_b], axis=1).astype(g.dtype),)

    return ColorTensor(record("lab_to_lch", out, (lab,), vjp), ColorSpace.LCH)


def hue_distance(h1: float, h2: float) -> float:
    delta = abs(h1 - h2) % (2.0 * math.pi)
    return min(delta, 2.0 * math.pi - delta)


def image_to_lab(img: np.ndarray) -> np.ndarray:
    """H×W×3 [0,1] image to H×W×3 CIELAB array (no tape)."""
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeError(f"expected an H×W×3 image, got {img.shape}")
    batch = Tensor(np.ascontiguousarray(img.transpose(2, 0, 1)[None]).astype(np.float64))
    with no_grad():
        lab = srgb_to_lab(ColorTensor(batch, ColorSpace.SRGB01)).tensor.data
    return lab[0].transpose(1, 2, 0)
