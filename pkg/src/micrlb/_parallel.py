import os
from concurrent.futures import ThreadPoolExecutor

ENV_THREADS = "MICRLB_THREADS"


def resolve_threads(threads=None):
    """Explicit value, else ``$MICRLB_THREADS``, else 1."""
    if threads is None:
        threads = os.environ.get(ENV_THREADS, "1")
    try:
        n = int(threads)
    except (TypeError, ValueError):
        raise ValueError(f"thread count must be an integer, got {threads!r}") from None
    if n < 1:
        raise ValueError(f"thread count must be >= 1, got {n}")
    return n


def map_ordered(fn, items, threads=None):
    """``list(map(fn, items))`` fanned out over a thread pool; order is preserved."""
    items = list(items)
    n = min(resolve_threads(threads), max(len(items), 1))
    if n == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
