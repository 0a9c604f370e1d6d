"""Full-reference (PSNR, SSIM) and no-reference (UCIQE) image quality metrics."""
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from src.errors import ConfigError, ShapeError
from src.schemas import LossConfig, MetricRecord
from src.services.color_space import image_to_lab
from src.services.losses import ssim
from src.tensor import Tensor, no_grad

logger = logging.getLogger(__name__)

PSNR_CAP = 100.0
UCIQE_COEFFICIENTS = (0.4680, 0.2745, 0.2576)
SATURATION_VARIANTS = ("cl2", "c_over_l")
SATURATION_EPS = 1e-6

Image = np.ndarray
MetricInput = Union[np.ndarray, Tensor]


def _same_shape(pred: np.ndarray, ref: np.ndarray) -> None:
    if pred.shape != ref.shape:
        raise ShapeError(f"metric inputs differ in shape: {pred.shape} vs {ref.shape}")


def psnr(pred: Image, ref: Image) -> float:
    """10·log10(1/MSE) for [0,1] images, capped at PSNR_CAP for identical inputs."""
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    _same_shape(pred, ref)
    mse = float(np.mean((pred - ref) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP)


def _as_batch(img: MetricInput) -> Tensor:
    if isinstance(img, Tensor):
        return img
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr.transpose(2, 0, 1)[None]
    if arr.ndim != 4:
        raise ShapeError(f"expected H×W×C or N×C×H×W input, got {arr.shape}")
    return Tensor(np.ascontiguousarray(arr))


def ssim_metric(pred: MetricInput, ref: MetricInput, cfg: Optional[LossConfig] = None) -> float:
    """Mean windowed SSIM; the same computation the SSIM loss differentiates."""
    with no_grad():
        return ssim(_as_batch(pred), _as_batch(ref), cfg).item()


def uciqe(img: Image, saturation: str = "cl2") -> float:
    """
    Weighted sum of chroma spread, luminance contrast and mean saturation in CIELAB.

    Chroma and lightness are divided by 100; contrast is the spread between the
    1st and 99th lightness percentiles. `saturation` selects C/sqrt(C²+L²)
    ("cl2") or C/L ("c_over_l").
    """
    if saturation not in SATURATION_VARIANTS:
        raise ConfigError(f"unknown saturation variant {saturation!r}; expected {SATURATION_VARIANTS}")
    lab = image_to_lab(np.asarray(img, dtype=np.float64))
    lightness = lab[..., 0] / 100.0
    chroma = np.hypot(lab[..., 1], lab[..., 2]) / 100.0

    chroma_std = float(np.std(chroma))
    low, high = np.percentile(lightness, [1.0, 99.0])
    contrast = float(high - low)

    if saturation == "cl2":
        denominator = np.sqrt(chroma ** 2 + lightness ** 2)
    else:
        denominator = lightness
    usable = denominator > SATURATION_EPS
    per_pixel = np.where(usable, chroma / np.where(usable, denominator, 1.0), 0.0)
    mean_saturation = float(np.mean(per_pixel))

    c1, c2, c3 = UCIQE_COEFFICIENTS
    return c1 * chroma_std + c2 * contrast + c3 * mean_saturation


def evaluate_pair(
    image_id: str, pred: Image, ref: Image, cfg: Optional[LossConfig] = None, saturation: str = "cl2"
) -> MetricRecord:
    return MetricRecord(
        image_id=image_id,
        psnr=psnr(pred, ref),
        ssim=ssim_metric(pred, ref, cfg),
        uciqe=uciqe(pred, saturation),
    )


def evaluate_pairs(
    pairs: Iterable[Tuple[str, Image, Image]],
    cfg: Optional[LossConfig] = None,
    saturation: str = "cl2",
    workers: int = 1,
) -> Tuple[List[MetricRecord], Dict[str, float]]:
    """Score (id, prediction, reference) triples; records come back in input order."""
    items = list(pairs)
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(lambda item: evaluate_pair(*item, cfg, saturation), items))
    else:
        records = [evaluate_pair(*item, cfg, saturation) for item in items]
    summary = summarize(records)
    logger.info(
        f"Evaluated {len(records)} images: psnr={summary['psnr']:.3f} dB "
        f"ssim={summary['ssim']:.4f} uciqe={summary['uciqe']:.4f}"
    )
    return records, summary


def summarize(records: Sequence[MetricRecord]) -> Dict[str, float]:
    if not records:
        return {"psnr": float("nan"), "ssim": float("nan"), "uciqe": float("nan")}
    frame = pd.DataFrame([record.model_dump() for record in records])
    return {key: float(frame[key].mean()) for key in ("psnr", "ssim", "uciqe")}


def write_metrics_csv(records: Sequence[MetricRecord], path: Union[str, Path]) -> Path:
    """One row per image plus a trailing `mean` row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(
        [record.model_dump() for record in records], columns=["image_id", "psnr", "ssim", "uciqe"]
    )
    means = summarize(records)
    frame.loc[len(frame)] = {"image_id": "mean", **means}
    frame.to_csv(path, index=False, float_format="%.6f")
    logger.info(f"Wrote {len(records)} metric rows to {path}")
    return path
