"""Reproducible RNG streams and an order-preserving process map."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

THREADS_ENV = "NESTEDTRIAL_THREADS"


def stream(seed: int, index: int) -> np.random.SeedSequence:
    """Independent stream for replicate ``index`` under base ``seed``."""
    return np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index),))


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def parallel_map(func, items, threads: int = 1):
    """``list(map(func, items))``, optionally across worker processes.

    Results come back in input order, so output never depends on ``threads``.
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [func(x) for x in items]
    chunk = max(1, len(items) // (4 * threads))
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, items, chunksize=chunk))
