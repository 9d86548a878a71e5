"""Thread-pool mapper for embarrassingly parallel sweep legs.

The heavy kernels (banded solves, tridiagonal eigenproblems) release the
interpreter lock inside LAPACK, so threads give real overlap without any
pickling of grid-sized arrays. APC_THREADS caps the worker count; the
default is the machine's CPU count. Order of results always matches the
order of inputs.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

__all__ = ["worker_count", "parallel_map"]


def worker_count() -> int:
    """Configured worker cap: APC_THREADS if set and sane, else CPU count."""
    raw = os.environ.get("APC_THREADS", "").strip()
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ValueError(
                f"APC_THREADS must be a positive integer, got {raw!r}")
        if n < 1:
            raise ValueError(
                f"APC_THREADS must be a positive integer, got {raw!r}")
        return n
    return os.cpu_count() or 1


def parallel_map(fn, items):
    """Ordered map over items, threading only when it can help."""
    items = list(items)
    n = min(worker_count(), len(items))
    if n <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
