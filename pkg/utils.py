"""
Shared utility functions for the bit-flip verifier.
Wall-clock budgets, ordered concurrent execution and small formatting helpers.
"""
from __future__ import annotations

import time
from concurrent.futures import Future, ThreadPoolExecutor
from typing import Callable, List, Optional, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")


class Budget:
    """
    Wall-clock budget with an absolute deadline.

    A budget of None never expires; a budget of 0 is expired from the start.

    Examples:
        >>> Budget(0).expired()
        True
        >>> Budget(None).expired()
        False
    """

    def __init__(self, seconds: Optional[float] = None):
        self.seconds = seconds
        self.started = time.perf_counter()
        self.deadline = None if seconds is None else self.started + seconds

    def expired(self) -> bool:
        if self.deadline is None:
            return False
        if self.seconds == 0:
            return True
        return time.perf_counter() >= self.deadline

    def elapsed(self) -> float:
        return time.perf_counter() - self.started

    def remaining(self) -> Optional[float]:
        if self.deadline is None:
            return None
        return max(0.0, self.deadline - time.perf_counter())


def run_ordered(
    fn: Callable[[T], R],
    items: Sequence[T],
    workers: int = 1,
    stop: Optional[Callable[[R], bool]] = None,
) -> List[R]:
    """
    Apply fn to every item and return results in submission order.

    With workers > 1 the calls run on a thread pool, but results are still
    consumed in submission order, so the outcome does not depend on which
    task finishes first. When stop(result) is true, later results are
    dropped and pending tasks are cancelled.

    Args:
        fn: Function applied to each item
        items: Inputs, processed in order
        workers: Thread-pool size; 1 runs inline
        stop: Optional predicate that ends consumption early

    Returns:
        Results up to and including the first result accepted by stop
    """
    results: List[R] = []
    if workers <= 1 or len(items) <= 1:
        for item in items:
            result = fn(item)
            results.append(result)
            if stop is not None and stop(result):
                break
        return results

    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures: List[Future] = [pool.submit(fn, item) for item in items]
        for index, future in enumerate(futures):
            result = future.result()
            results.append(result)
            if stop is not None and stop(result):
                for pending in futures[index + 1:]:
                    pending.cancel()
                break
    return results


def format_interval(lo: float, hi: float, digits: int = 4) -> str:
    """
    Format a closed interval for human-readable output.

    Examples:
        >>> format_interval(-0.5, 0.25)
        '[-0.5, 0.25]'
    """
    return f"[{round(lo, digits):g}, {round(hi, digits):g}]"
