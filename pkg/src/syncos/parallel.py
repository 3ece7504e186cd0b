"""Order-preserving map with a worker cap from the environment.

``SYNCOS_THREADS`` bounds chunk-level parallelism. Results come back in input
order and no worker ever touches the random stream, so the thread count can
never change a sampler's output.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

__all__ = ["thread_count", "ordered_map"]

T = TypeVar("T")
R = TypeVar("R")

ENV_VAR = "SYNCOS_THREADS"


def thread_count() -> int:
    """Worker cap from SYNCOS_THREADS; defaults to 1 (serial)."""
    raw = os.environ.get(ENV_VAR)
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{ENV_VAR} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"{ENV_VAR} must be a positive integer, got {raw!r}")
    return n


def ordered_map(fn: Callable[[T], R], items: Sequence[T] | Iterable[T]) -> list[R]:
    """Apply fn to every item, preserving order; parallel when the cap allows."""
    items = list(items)
    workers = min(thread_count(), max(len(items), 1))
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
