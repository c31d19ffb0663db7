"""Process-level performance settings."""
from __future__ import annotations

import ctypes
import ctypes.util
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")

_M_TRIM_THRESHOLD = -1
_M_TOP_PAD = -2
_M_MMAP_THRESHOLD = -3


def tune_allocator() -> bool:
    """Keep freed arrays in the glibc heap instead of unmapping them.

    Training allocates many short-lived ~1 MB arrays; with the default
    thresholds each one is a fresh mmap and pays page faults on first
    touch, which roughly doubles step time. No-op off glibc.
    """
    name = ctypes.util.find_library("c")
    if not name:
        return False
    try:
        libc = ctypes.CDLL(name)
        mallopt = libc.mallopt
    except (OSError, AttributeError):
        return False
    ok = mallopt(_M_MMAP_THRESHOLD, 1 << 30)
    ok &= mallopt(_M_TRIM_THRESHOLD, 1 << 30)
    ok &= mallopt(_M_TOP_PAD, 64 << 20)
    return bool(ok)


def parallel_map(fn: Callable[[T], R], items: Iterable[T], parallelism: int = 1) -> list[R]:
    """``[fn(x) for x in items]``, optionally across worker processes.

    Results come back in input order, so callers see the same list at any
    parallelism level. ``fn`` and the items must be picklable when
    ``parallelism > 1``.
    """
    items = list(items)
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    if parallelism == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    workers = min(parallelism, len(items))
    with ProcessPoolExecutor(max_workers=workers, initializer=tune_allocator) as pool:
        return list(pool.map(fn, items))
