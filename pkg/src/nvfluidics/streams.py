"""Seed-derived random streams.

Every task that consumes randomness (one Monte Carlo average, one noise
realization) gets its own Philox generator keyed by ``(seed, *key)``. Philox is
counter-based, so streams are independent of evaluation order and results do
not depend on how many workers run the tasks.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np


def stream(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def map_ordered(fn, items, workers: int = 1) -> list:
    """``[fn(i) for i in items]``, optionally spread over a thread pool.

    Output order always matches ``items``.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
