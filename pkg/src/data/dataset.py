import hashlib
import logging
import math
import threading
from collections import deque
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Deque, Dict, Generic, Iterable, Iterator, List, Optional, Tuple, TypeVar, Union

import numpy as np

from src.data.image_io import IMAGE_SUFFIXES, load_image, normalize, resize_bilinear
from src.errors import ConfigError, DatasetError, ShapeError
from src.tensor import Tensor

logger = logging.getLogger(__name__)

INPUT_DIR = "input"
GT_DIR = "gt"

T = TypeVar("T")
R = TypeVar("R")


@dataclass(frozen=True)
class ImagePair:
    name: str
    input_path: Path
    gt_path: Path


@dataclass
class PairedDataset:
    """(degraded, ground truth) pairs matched by filename across `input/` and `gt/`."""

    root: Path
    pairs: List[ImagePair]
    unmatched: List[str] = field(default_factory=list)

    @classmethod
    def discover(cls, root: Union[str, Path]) -> "PairedDataset":
        root = Path(root)
        input_dir, gt_dir = root / INPUT_DIR, root / GT_DIR
        for directory in (input_dir, gt_dir):
            if not directory.is_dir():
                raise DatasetError(f"dataset root {root} has no {directory.name}/ directory")
        inputs = _image_files(input_dir)
        gts = _image_files(gt_dir)
        names = sorted(set(inputs) & set(gts))
        unmatched = sorted(set(inputs) ^ set(gts))
        if unmatched:
            logger.warning(
                f"{len(unmatched)} unmatched files under {root} "
                f"({len(set(inputs) - set(gts))} input-only, {len(set(gts) - set(inputs))} gt-only)"
            )
        pairs = [ImagePair(name, inputs[name], gts[name]) for name in names]
        logger.info(f"Discovered {len(pairs)} pairs under {root}")
        return cls(root=root, pairs=pairs, unmatched=unmatched)

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def names(self) -> List[str]:
        return [pair.name for pair in self.pairs]


def _image_files(directory: Path) -> Dict[str, Path]:
    return {
        path.name: path
        for path in sorted(directory.iterdir())
        if path.is_file() and path.suffix.lower() in IMAGE_SUFFIXES
    }


@dataclass
class Split:
    name: str
    pairs: List[ImagePair]

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def names(self) -> List[str]:
        return [pair.name for pair in self.pairs]


def split_order_key(name: str, seed: int) -> str:
    return hashlib.sha256(f"{seed}:{name}".encode("utf-8")).hexdigest()


def split_dataset(ds: PairedDataset, ratio: float = 0.8, seed: int = 0) -> Tuple[Split, Split]:
    """Order pairs by a seeded hash of the filename; the first ceil(ratio·n) train."""
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"split ratio must lie in (0, 1), got {ratio}")
    if not ds.pairs:
        raise DatasetError(f"cannot split an empty dataset at {ds.root}")
    ordered = sorted(ds.pairs, key=lambda pair: split_order_key(pair.name, seed))
    n_train = math.ceil(round(ratio * len(ordered), 9))
    train, test = Split("train", ordered[:n_train]), Split("test", ordered[n_train:])
    logger.info(f"Split {len(ds)} pairs into {len(train)} train / {len(test)} test (seed {seed})")
    return train, test


class PairLoader:
    """Loads, resizes and normalizes pairs; keeps decoded pairs in memory when `cache` is set."""

    def __init__(self, image_size: Optional[int] = 256, cache: bool = False):
        self.image_size = image_size
        self.cache = cache
        self._store: Dict[str, Tuple[np.ndarray, np.ndarray]] = {}
        self._lock = threading.Lock()

    def images(self, pair: ImagePair) -> Tuple[np.ndarray, np.ndarray]:
        """H×W×3 [0,1] input and ground truth at the configured size."""
        degraded = load_image(pair.input_path)
        target = load_image(pair.gt_path)
        if self.image_size is not None:
            degraded = resize_bilinear(degraded, self.image_size, self.image_size)
            target = resize_bilinear(target, self.image_size, self.image_size)
        if degraded.shape != target.shape:
            raise ShapeError(f"pair {pair.name}: input {degraded.shape} and gt {target.shape} differ")
        return degraded, target

    def load(self, pair: ImagePair) -> Tuple[np.ndarray, np.ndarray]:
        """3×H×W slices in [-1,1]."""
        with self._lock:
            cached = self._store.get(pair.name)
        if cached is not None:
            return cached
        degraded, target = self.images(pair)
        result = (normalize(degraded), normalize(target))
        if self.cache:
            with self._lock:
                self._store[pair.name] = result
        return result

    @property
    def cached_pairs(self) -> int:
        with self._lock:
            return len(self._store)


@dataclass
class Batch:
    ids: List[str]
    inputs: Tensor
    targets: Tensor

    def __len__(self) -> int:
        return len(self.ids)


def batch_indices(count: int, batch_size: int, epoch_seed: int) -> List[List[int]]:
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    order = np.random.default_rng(epoch_seed).permutation(count)
    return [order[start:start + batch_size].tolist() for start in range(0, count, batch_size)]


def collate(split: Split, indices: List[int], loader: PairLoader) -> Batch:
    pairs = [split.pairs[i] for i in indices]
    loaded = [loader.load(pair) for pair in pairs]
    inputs = np.stack([item[0] for item in loaded]).astype(np.float32)
    targets = np.stack([item[1] for item in loaded]).astype(np.float32)
    return Batch([pair.name for pair in pairs], Tensor(inputs), Tensor(targets))


def batches(
    split: Split,
    batch_size: int,
    epoch_seed: int,
    loader: Optional[PairLoader] = None,
    prefetch_depth: int = 0,
    workers: int = 1,
) -> Iterator[Batch]:
    """Shuffled batches for one epoch; the final short batch is kept."""
    loader = loader or PairLoader()
    groups = batch_indices(len(split), batch_size, epoch_seed)

    def build(indices: List[int]) -> Batch:
        return collate(split, indices, loader)

    if prefetch_depth < 1:
        for indices in groups:
            yield build(indices)
        return
    with BatchPrefetcher(groups, build, depth=prefetch_depth, workers=workers) as prefetcher:
        yield from prefetcher


class BatchPrefetcher(Generic[T, R]):
    """
    Runs `build` over `items` on a thread pool, at most `depth` results ahead of
    the consumer, and yields results in the order of `items`.
    """

    def __init__(self, items: Iterable[T], build: Callable[[T], R], depth: int = 2, workers: int = 1):
        if depth < 1 or workers < 1:
            raise ConfigError(f"prefetch depth and workers must be >= 1, got {depth}/{workers}")
        self._items = iter(items)
        self._build = build
        self._depth = depth
        self._pool = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="lu2net-data")
        self._pending: Deque[Future] = deque()

    def _fill(self) -> None:
        while len(self._pending) < self._depth:
            try:
                item = next(self._items)
            except StopIteration:
                return
            self._pending.append(self._pool.submit(self._build, item))

    def __iter__(self) -> Iterator[R]:
        self._fill()
        while self._pending:
            result = self._pending.popleft().result()
            self._fill()
            yield result

    @property
    def queued(self) -> int:
        return len(self._pending)

    def close(self) -> None:
        for future in self._pending:
            future.cancel()
        self._pending.clear()
        self._pool.shutdown(wait=True)

    def __enter__(self) -> "BatchPrefetcher[T, R]":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
