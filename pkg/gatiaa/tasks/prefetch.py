"""
Background batch preparation for the training loop.

Preparation jobs run on a bounded thread pool and results are yielded in
submission order; every job owns its random stream, so the output does not
depend on the number of workers.
"""
import logging
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterator, Sequence, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar('T')
J = TypeVar('J')


def prefetch(jobs: Sequence[J], prepare: Callable[[J], T], workers: int = 1,
             lookahead: int = 2) -> Iterator[T]:
    """
    Yield prepare(job) for every job in order.

    With workers <= 1 preparation runs inline in the calling thread.
    """
    if workers <= 1:
        for job in jobs:
            yield prepare(job)
        return

    depth = max(1, workers * lookahead)
    with ThreadPoolExecutor(max_workers=workers, thread_name_prefix='gatiaa-prefetch') as pool:
        pending = deque()
        position = 0
        while position < len(jobs) or pending:
            while position < len(jobs) and len(pending) < depth:
                pending.append(pool.submit(prepare, jobs[position]))
                position += 1
            future = pending.popleft()
            try:
                yield future.result()
            except Exception as e:
                logger.error(f"Error preparing batch: {str(e)}")
                for f in pending:
                    f.cancel()
                raise
