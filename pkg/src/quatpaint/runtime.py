"""Process-level performance and reproducibility knobs.

Two things live here:

- BLAS thread-pool pinning. Run-to-run bitwise reproducibility requires a
  stable GEMM partitioning, which in practice means a stable BLAS thread
  count. QUATPAINT_THREADS pins it explicitly; otherwise the machine
  default applies (already stable on a given host).

- glibc malloc tuning. One optimization step allocates several hundred MB
  of short-lived arrays; with default malloc settings each lands in a fresh
  mmap region and pays full page-fault cost. Raising the mmap/trim
  thresholds lets those buffers recycle on the heap, which roughly halves
  the wall-clock time of an iteration on Linux.
"""

from __future__ import annotations

import contextlib
import ctypes
import os

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover - soft dependency
    threadpool_limits = None

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3
_malloc_tuned = False


def thread_count_from_env() -> int | None:
    raw = os.environ.get("QUATPAINT_THREADS")
    if not raw:
        return None
    n = int(raw)
    if n < 1:
        raise ValueError(f"QUATPAINT_THREADS must be >= 1, got {raw}")
    return n


@contextlib.contextmanager
def blas_threads(n: int | None):
    """Limit BLAS pools to n threads inside the context (no-op for None)."""
    if n is None or threadpool_limits is None:
        yield
    else:
        with threadpool_limits(limits=n):
            yield


def tune_malloc_for_large_arrays(threshold_bytes: int = 512 * 2**20) -> bool:
    """Keep large allocations on the recyclable heap (glibc only, idempotent).

    Returns True when the tuning is in effect.
    """
    global _malloc_tuned
    if _malloc_tuned:
        return True
    try:
        libc = ctypes.CDLL("libc.so.6", use_errno=True)
        ok = libc.mallopt(_M_MMAP_THRESHOLD, threshold_bytes) \
            and libc.mallopt(_M_TRIM_THRESHOLD, threshold_bytes)
        _malloc_tuned = bool(ok)
    except (OSError, AttributeError):  # pragma: no cover - non-glibc
        _malloc_tuned = False
    return _malloc_tuned
