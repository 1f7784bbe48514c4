"""Deterministic parallel map over independent jobs.

The worker count comes from the ``RESTRICT_WORKERS`` environment variable
unless given explicitly. Each job runs with BLAS threads pinned to one, and
results are returned in input order, so output does not depend on the
number of workers.
"""

from __future__ import annotations

import os
from typing import Callable, Iterable, Optional

from threadpoolctl import threadpool_limits

WORKERS_ENV = "RESTRICT_WORKERS"


def resolve_workers(workers: Optional[int] = None) -> int:
    """Worker count from the argument, then the environment, defaulting to 1."""
    if workers is None:
        raw = os.environ.get(WORKERS_ENV, "1")
        try:
            workers = int(raw)
        except ValueError as exc:
            raise ValueError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from exc
    if workers < 1:
        raise ValueError("worker count must be at least 1")
    return workers


class _Pinned:
    def __init__(self, fn):
        self.fn = fn

    def __call__(self, item):
        with threadpool_limits(limits=1):
            return self.fn(item)


def parallel_map(fn: Callable, items: Iterable, workers: Optional[int] = None) -> list:
    """``[fn(x) for x in items]`` spread over processes, in input order."""
    items = list(items)
    n = resolve_workers(workers)
    job = _Pinned(fn)
    if n == 1 or len(items) <= 1:
        return [job(x) for x in items]
    from joblib import Parallel, delayed
    return Parallel(n_jobs=min(n, len(items)), backend="loky")(delayed(job)(x) for x in items)
