"""Order-preserving chunked map over worker processes."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence

# Monte Carlo samples are processed in fixed chunks of this size.  Chunk
# boundaries never depend on the worker count.
CHUNK = 256


def default_workers() -> int:
    return os.cpu_count() or 1


def chunk_bounds(count: int, chunk: int = CHUNK) -> list[tuple[int, int]]:
    return [(k, min(count, k + chunk)) for k in range(0, count, chunk)]


def map_ordered(func: Callable, tasks: Sequence[tuple], workers: int = 1) -> list:
    """``[func(*t) for t in tasks]``, optionally spread over processes."""
    if workers is None:
        workers = default_workers()
    if workers <= 1 or len(tasks) <= 1:
        return [func(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        futures = [pool.submit(func, *t) for t in tasks]
        return [f.result() for f in futures]
