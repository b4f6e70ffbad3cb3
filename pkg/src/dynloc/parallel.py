"""Order-preserving parallel map over independent jobs."""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def resolve_workers(workers: int | None) -> int:
    if workers is None or workers <= 0:
        return os.cpu_count() or 1
    return int(workers)


def pool_map(fn: Callable[[T], R], jobs: Iterable[T], workers: int = 1, chunksize: int = 4) -> list[R]:
    """``[fn(j) for j in jobs]`` with results in job order whatever the scheduling.

    ``fn`` must be a module-level function so it can be pickled.  Each job
    carries everything it needs (seed and index), so the results do not
    depend on which worker ran it.
    """
    jobs = list(jobs)
    workers = resolve_workers(workers)
    if workers == 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as ex:
        return list(ex.map(fn, jobs, chunksize=chunksize))
