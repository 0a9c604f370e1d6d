import io
import logging
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from src.errors import ConfigError, DecodeError, ShapeError
from src.tensor import interpolation_matrix

logger = logging.getLogger(__name__)

SUPPORTED_FORMATS = {"PNG", "PPM"}
SUFFIX_FORMATS = {".png": "PNG", ".ppm": "PPM"}
IMAGE_SUFFIXES = tuple(SUFFIX_FORMATS)

PathLike = Union[str, Path]


def _decode(source: Union[Path, BinaryIO], label: str) -> np.ndarray:
    try:
        with Image.open(source) as img:
            if img.format not in SUPPORTED_FORMATS:
                raise DecodeError(label, f"unsupported format {img.format}")
            if img.mode not in ("RGB", "RGBA", "L", "P"):
                raise DecodeError(label, f"unsupported pixel mode {img.mode}")
            img.load()
            pixels = np.asarray(img.convert("RGB"), dtype=np.uint8)
    except DecodeError:
        raise
    except FileNotFoundError:
        raise DecodeError(label, "file not found")
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as e:
        raise DecodeError(label, str(e) or type(e).__name__) from e
    return pixels.astype(np.float32) / np.float32(255.0)


def load_image(path: PathLike) -> np.ndarray:
    """Decode an 8-bit PNG or binary PPM into an H×W×3 float32 array of v/255."""
    return _decode(Path(path), str(path))


def decode_image(data: bytes, label: str = "<upload>") -> np.ndarray:
    return _decode(io.BytesIO(data), label)


def encode_png(img: np.ndarray) -> bytes:
    buffer = io.BytesIO()
    Image.fromarray(to_bytes(img), mode="RGB").save(buffer, format="PNG")
    return buffer.getvalue()


def to_bytes(img: np.ndarray) -> np.ndarray:
    """[0,1] floats to uint8 with round-half-up."""
    return np.floor(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def save_image(img: np.ndarray, path: PathLike) -> Path:
    path = Path(path)
    fmt = SUFFIX_FORMATS.get(path.suffix.lower())
    if fmt is None:
        raise ConfigError(f"cannot save {path}: only {', '.join(IMAGE_SUFFIXES)} are supported")
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeError(f"expected an H×W×3 image, got {img.shape}")
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_bytes(img), mode="RGB").save(path, format=fmt)
    return path


def resize_bilinear(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Corner-aligned bilinear resize of an H×W×C image."""
    h, w = img.shape[:2]
    if (h, w) == (height, width):
        return img
    rows = interpolation_matrix(h, height, np.float64)
    cols = interpolation_matrix(w, width, np.float64)
    out = np.einsum("ih,hwc,jw->ijc", rows, img.astype(np.float64), cols)
    return out.astype(img.dtype)


def normalize(img: np.ndarray) -> np.ndarray:
    """H×W×3 image in [0,1] to a 3×H×W slice in [-1,1]."""
    return np.ascontiguousarray(img.transpose(2, 0, 1)) * 2.0 - 1.0


def denormalize(arr: np.ndarray) -> np.ndarray:
    """3×H×W slice in [-1,1] back to an H×W×3 image, clamped to [0,1]."""
    return np.clip((arr.transpose(1, 2, 0) + 1.0) / 2.0, 0.0, 1.0)


def pad_to_multiple(img: np.ndarray, divisor: int) -> np.ndarray:
    """Edge-replicate the bottom/right borders so H and W divide evenly."""
    h, w = img.shape[:2]
    pad_h = (-h) % divisor
    pad_w = (-w) % divisor
    if pad_h == 0 and pad_w == 0:
        return img
    return np.pad(img, ((0, pad_h), (0, pad_w), (0, 0)), mode="edge")
