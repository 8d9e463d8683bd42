"""Worker-pool helpers. The pool size comes from ``ROBUSTPROP_THREADS`` (default 1)."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

THREADS_ENV = "ROBUSTPROP_THREADS"


def n_workers(requested: int | None = None) -> int:
    if requested is not None:
        return max(1, int(requested))
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None


def ordered_map(fn, items, workers: int | None = None) -> list:
    """``[fn(i) for i in items]``, possibly on a thread pool; result order follows ``items``."""
    items = list(items)
    w = n_workers(workers)
    if w == 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=w) as pool:
        return list(pool.map(fn, items))
