import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional

import numpy as np

logger = logging.getLogger(__name__)

_lock = threading.Lock()
_num_threads = 1
_executor: Optional[ThreadPoolExecutor] = None


def set_num_threads(count: int) -> None:
    global _num_threads, _executor
    if count < 1:
        raise ValueError(f"thread count must be >= 1, got {count}")
    with _lock:
        if count == _num_threads:
            return
        if _executor is not None:
            _executor.shutdown(wait=True)
            _executor = None
        _num_threads = count
        if count > 1:
            _executor = ThreadPoolExecutor(max_workers=count, thread_name_prefix="lu2net-op")
    logger.debug(f"Intra-op threads set to {count}")


def get_num_threads() -> int:
    return _num_threads


def run_chunked(total: int, work: Callable[[int, int], None]) -> None:
    """
    Split [0, total) into contiguous chunks and run `work(start, stop)` on the pool.

    Each chunk writes a disjoint slice of the output, so element results do not
    depend on the thread count.
    """
    executor = _executor
    workers = min(_num_threads, total)
    if executor is None or workers <= 1:
        work(0, total)
        return
    bounds = np.linspace(0, total, workers + 1).astype(int)
    futures = [
        executor.submit(work, int(start), int(stop))
        for start, stop in zip(bounds[:-1], bounds[1:])
        if stop > start
    ]
    for future in futures:
        future.result()
