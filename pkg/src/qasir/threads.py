"""Bounded thread fan-out with deterministic output ordering."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def worker_count() -> int:
    """Parallelism cap from QASIR_THREADS (default 1 = serial)."""
    raw = os.environ.get("QASIR_THREADS", "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, n)


def map_ordered(fn: Callable[[T], R], items: Sequence[T]) -> list[R]:
    """Apply fn to every item; results come back in input order regardless
    of scheduling."""
    workers = worker_count()
    if workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
