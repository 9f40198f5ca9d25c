"""Order-preserving parallel execution of independent work units."""

import logging
import multiprocessing
from collections.abc import Callable, Sequence
from concurrent.futures import ProcessPoolExecutor, as_completed
from typing import Any, TypeVar

logger = logging.getLogger(__name__)

R = TypeVar("R")


def default_workers() -> int:
    """CPU count minus one, at least 1."""
    return max(1, multiprocessing.cpu_count() - 1)


def run_ordered(
    worker: Callable[[Any], R],
    args_list: Sequence[Any],
    max_workers: int | None = 1,
    callback: Callable[[int, R], None] | None = None,
) -> list[R]:
    """Run ``worker`` over every argument tuple and return results in input order.

    Workers must be module-level functions taking one argument tuple so they
    can be pickled into a process pool. Results are placed by submission
    index, so the worker count never changes the returned list.

    Args:
        worker: Function applied to each element of ``args_list``.
        args_list: One argument tuple per work unit.
        max_workers: Pool size; ``None`` uses :func:`default_workers`,
                     values <= 1 run serially in-process.
        callback: Optional ``callback(index, result)`` called as units finish.

    Returns:
        List of results aligned with ``args_list``.
    """
    workers = default_workers() if max_workers is None else max_workers
    if workers <= 1 or len(args_list) <= 1:
        results = []
        for index, args in enumerate(args_list):
            result = worker(args)
            if callback:
                callback(index, result)
            results.append(result)
        return results

    logger.debug("Running %d work units on %d workers", len(args_list), workers)
    slots: list[Any] = [None] * len(args_list)
    with ProcessPoolExecutor(max_workers=workers) as executor:
        futures = {executor.submit(worker, args): i for i, args in enumerate(args_list)}
        for future in as_completed(futures):
            index = futures[future]
            slots[index] = future.result()
            if callback:
                callback(index, slots[index])
    return slots
