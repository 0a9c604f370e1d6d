"""
Named-tensor archive.

Layout (little-endian): b"LU2N" | version u32 | count u32 | per tensor:
name length u16, UTF-8 name, ndim u8, dims u32 × ndim, float32 data |
CRC32 u32 of every preceding byte.
"""
import logging
import struct
import zlib
from pathlib import Path
from typing import Dict, Mapping, Optional, Union

import numpy as np

from src.errors import (
    BadMagicError,
    ChecksumError,
    MissingTensorError,
    ShapeConflictError,
    VersionMismatchError,
)
from src.model.network import Network
from src.schemas import NetworkConfig

logger = logging.getLogger(__name__)

MAGIC = b"LU2N"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sII")
CRC = struct.Struct("<I")

PathLike = Union[str, Path]


def encode_tensors(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [HEADER.pack(MAGIC, FORMAT_VERSION, len(tensors))]
    for name, array in tensors.items():
        encoded = name.encode("utf-8")
        array = np.asarray(array)
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack(f"<B{array.ndim}I", array.ndim, *array.shape))
        parts.append(np.ascontiguousarray(array, dtype="<f4").tobytes())
    payload = b"".join(parts)
    return payload + CRC.pack(zlib.crc32(payload))


def decode_tensors(blob: bytes, source: str = "<bytes>") -> Dict[str, np.ndarray]:
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise BadMagicError(f"{source}: not a checkpoint (magic {blob[:4]!r})")
    if len(blob) < HEADER.size + CRC.size:
        raise ChecksumError(f"{source}: truncated header ({len(blob)} bytes)")
    payload, (stored,) = blob[:-CRC.size], CRC.unpack(blob[-CRC.size:])
    if zlib.crc32(payload) != stored:
        raise ChecksumError(f"{source}: CRC32 mismatch (file truncated or corrupted)")
    _, version, count = HEADER.unpack_from(payload, 0)
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"{source}: format version {version}, expected {FORMAT_VERSION}")

    offset = HEADER.size
    tensors: Dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", payload, offset)
            offset += 2
            name = payload[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<B", payload, offset)
            offset += 1
            dims = struct.unpack_from(f"<{ndim}I", payload, offset)
            offset += 4 * ndim
            size = int(np.prod(dims, dtype=np.int64))
            end = offset + 4 * size
            if end > len(payload):
                raise ChecksumError(f"{source}: tensor {name!r} runs past the end of the file")
            tensors[name] = np.frombuffer(payload, dtype="<f4", count=size, offset=offset).reshape(dims).astype(np.float32)
            offset = end
    except (struct.error, UnicodeDecodeError) as e:
        raise ChecksumError(f"{source}: malformed tensor table ({e})") from e
    if offset != len(payload):
        raise ChecksumError(f"{source}: {len(payload) - offset} trailing bytes after {count} tensors")
    return tensors


def write_tensors(path: PathLike, tensors: Mapping[str, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = encode_tensors(tensors)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    tmp.replace(path)
    logger.debug(f"Wrote {len(tensors)} tensors ({len(blob)} bytes) to {path}")
    return path


def read_tensors(path: PathLike) -> Dict[str, np.ndarray]:
    path = Path(path)
    return decode_tensors(path.read_bytes(), str(path))


def save_weights(net: Network, path: PathLike, extra: Optional[Mapping[str, np.ndarray]] = None) -> Path:
    """Network parameters in registration order, then any `extra` tensors (optimizer state)."""
    tensors: Dict[str, np.ndarray] = dict(net.state())
    if extra:
        tensors.update(extra)
    return write_tensors(path, tensors)


def load_weights(path: PathLike, config: NetworkConfig, dtype: np.dtype = np.float32) -> Network:
    """Build a network for `config` and fill every parameter from the file; extra tensors are ignored."""
    tensors = read_tensors(path)
    net = Network(config, dtype)
    for name, param in net.named_parameters():
        if name not in tensors:
            raise MissingTensorError(f"{path}: missing tensor {name!r}")
        if tensors[name].shape != param.shape:
            raise ShapeConflictError(
                f"{path}: tensor {name!r} has shape {tensors[name].shape}, config expects {param.shape}"
            )
    net.load_state(tensors)
    logger.info(f"Loaded {len(net.params)} parameter tensors from {path}")
    return net
