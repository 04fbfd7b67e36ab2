"""
Worker fan-out for independent numerical work items.

Every parallel loop in the library (sampling chunks, pressure branches,
sweep grid points, suite families) goes through `run_parallel`, which
submits items to a thread pool and merges results in submission order.
numpy releases the GIL inside its kernels, so threads are enough here.
"""
import asyncio
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime
from typing import Any, Callable, Iterable, List, Optional, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")

_THREAD_BUDGET = 0


def set_thread_budget(threads: int) -> None:
    """Set the process-wide worker budget (0 = one worker per CPU)."""
    global _THREAD_BUDGET
    if threads < 0:
        raise ValueError(f"thread budget must be >= 0, got {threads}")
    _THREAD_BUDGET = threads


def resolve_workers(threads: Optional[int] = None) -> int:
    """Number of workers to use for a given request, falling back to the process budget."""
    requested = _THREAD_BUDGET if threads is None else threads
    if requested <= 0:
        return os.cpu_count() or 1
    return requested


async def _gather(func: Callable[[Any], T], items: List[Any], workers: int) -> List[T]:
    """Submit every item to the executor and await them together."""
    loop = asyncio.get_running_loop()
    with ThreadPoolExecutor(max_workers=workers) as executor:
        tasks = [loop.run_in_executor(executor, func, item) for item in items]
        # gather keeps submission order, so the merge is deterministic
        return await asyncio.gather(*tasks)


def run_parallel(
    func: Callable[[Any], T],
    items: Iterable[Any],
    threads: Optional[int] = None,
    label: str = "work",
) -> List[T]:
    """
    Apply `func` to every item using the worker budget, returning results in item order.

    Runs inline when only one worker is available or there is a single item.
    Exceptions from any item propagate to the caller.
    """
    items = list(items)
    workers = min(resolve_workers(threads), max(1, len(items)))
    start = datetime.now()
    logger.debug(f"{label}: {len(items)} items on {workers} workers")

    if workers == 1 or len(items) <= 1:
        results = [func(item) for item in items]
    else:
        try:
            asyncio.get_running_loop()
        except RuntimeError:
            results = asyncio.run(_gather(func, items, workers))
        else:
            # already inside an event loop: fall back to a plain pool
            with ThreadPoolExecutor(max_workers=workers) as executor:
                results = list(executor.map(func, items))

    duration = (datetime.now() - start).total_seconds()
    logger.debug(f"{label}: completed in {duration:.2f} seconds")
    return results
