"""Run independent trials across a thread pool and return them in trial order."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Callable, TypeVar

LOGGER = logging.getLogger(__name__)

T = TypeVar("T")


def run_trials(fn: Callable[[int], T], count: int, threads: int = 1) -> list[T]:
    """Call ``fn(trial)`` for trial in ``range(count)``.

    Each trial derives its own random stream from its index, so results do not
    depend on the number of threads. The first exception raised by a trial is
    re-raised after the pool shuts down.
    """
    if count < 0:
        raise ValueError(f"count must be >= 0, got {count}")
    if threads < 1:
        raise ValueError(f"threads must be >= 1, got {threads}")
    if threads == 1 or count <= 1:
        return [fn(trial) for trial in range(count)]

    results: dict[int, T] = {}
    max_workers = min(threads, count)
    LOGGER.info("Running %s trials on %s threads", count, max_workers)
    with ThreadPoolExecutor(max_workers=max_workers) as executor:
        futures = {executor.submit(fn, trial): trial for trial in range(count)}
        for future in as_completed(futures):
            trial = futures[future]
            results[trial] = future.result()
            LOGGER.debug("Trial %s finished", trial)
    return [results[trial] for trial in range(count)]
