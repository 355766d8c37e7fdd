"""Bounded worker pool for independent frequency solves and campaign runs."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

WORKERS_ENV = "ACOUSTOPT_WORKERS"


def worker_count(workers: int | None = None) -> int:
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1") or 1)
    return max(1, int(workers))


def map_ordered(fn, items, workers: int | None = None) -> list:
    """``[fn(x) for x in items]``, possibly threaded; results keep input order."""
    items = list(items)
    n = worker_count(workers)
    if n == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
