"""Bounded worker pools with deterministic, order-preserving result collection."""

from __future__ import annotations

import contextlib
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Iterator, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def map_tasks(fn: Callable[[T], R], tasks: Iterable[T], executor=None) -> list[R]:
    """Apply ``fn`` to each task, keeping input order in the output."""
    tasks = list(tasks)
    if executor is None or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    return list(executor.map(fn, tasks))


@contextlib.contextmanager
def worker_pool(workers: int) -> Iterator[ProcessPoolExecutor | None]:
    """Yield a process pool of ``workers`` processes, or None for one worker."""
    if workers <= 1:
        yield None
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        yield pool
