"""Worker pool for per-image stages.

All per-image computations are pure, so results are reduced in input
order and the output never depends on the thread count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

THREADS_ENV_VAR = "OOD_AUDIT_THREADS"


def resolve_threads(requested: int | None = None) -> int:
    """Requested count, else the env var, else available cores."""
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get(THREADS_ENV_VAR)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def pmap(fn, items, threads: int = 1) -> list:
    """map() preserving input order, optionally over a thread pool."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
