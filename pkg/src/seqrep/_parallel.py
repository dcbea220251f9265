"""Order-preserving worker pool capped by ``SEQREP_THREADS``."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

ENV_VAR = "SEQREP_THREADS"


def worker_count(requested=None) -> int:
    if requested is None:
        raw = os.environ.get(ENV_VAR, "")
        requested = int(raw) if raw.strip().isdigit() else (os.cpu_count() or 1)
    return max(1, int(requested))


def ordered_map(fn, items, threads=None):
    """``list(map(fn, items))``, possibly threaded; result order always matches ``items``."""
    items = list(items)
    n = min(worker_count(threads), len(items))
    if n <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
