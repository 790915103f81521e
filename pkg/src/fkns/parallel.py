"""Chunked work dispatch with a worker-count-independent result order.

Tasks are fixed-size chunks assembled by index, and callers reduce once over
the assembled arrays, so every reported value is bitwise identical whether
chunks run in-process or on a process pool.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence


def chunked_map(fn: Callable, tasks: Sequence, workers: int = 1) -> list:
    """Apply fn to each task; results come back in task order regardless of workers."""
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))
