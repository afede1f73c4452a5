import logging
from concurrent import futures
from typing import Callable, Iterable, List, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def ordered_map(fn: Callable[[T], R], items: Iterable[T], threads: int = 1) -> List[R]:
    """Apply ``fn`` to every item, results in input order whatever the worker count.

    threads <= 1 runs inline. The kernels are numpy-bound, so a thread pool
    is enough to use several cores.
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]

    workers = min(threads, len(items))
    logger.debug("Running %d tasks on %d threads", len(items), workers)
    with futures.ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(fn, items))
