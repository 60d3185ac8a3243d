"""Order-preserving fan-out over a capped thread pool."""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Sequence, TypeVar

from .config import max_threads

logger = logging.getLogger(__name__)

T = TypeVar('T')
R = TypeVar('R')


def ordered_map(fn: Callable[[T], R], items: Sequence[T], workers: Optional[int] = None) -> List[R]:
    """Apply fn to every item; results come back in input order regardless of scheduling."""
    workers = max_threads() if workers is None else max(1, workers)
    workers = min(workers, len(items)) if items else 1
    if workers == 1:
        return [fn(item) for item in items]
    logger.debug("fanning out %d items over %d threads", len(items), workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
