import os
from concurrent.futures import ThreadPoolExecutor


def thread_count():
    raw = os.environ.get("DQVI_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return os.cpu_count() or 1


def pmap(func, items):
    """Ordered map over independent tasks, capped by ``DQVI_THREADS``."""
    items = list(items)
    workers = min(thread_count(), len(items))
    if workers <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))
