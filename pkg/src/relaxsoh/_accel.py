"""Optional numba acceleration for the hot numeric kernels.

Every hot kernel in this package exists twice: a loop-style source that numba
can compile, and a vectorized numpy fallback. Which one is bound to the public
kernel name is decided once, at import time:

* numba importable and ``RELAXSOH_NUMBA`` unset/``1`` -> compiled path
* ``RELAXSOH_NUMBA=0`` (or numba missing)            -> numpy fallback

Both paths of each kernel stay importable under their private names so the
equivalence tests and ``benchmarks/bench_kernels.py`` can compare them
head-to-head regardless of the flag.
"""

import contextlib
import os

__all__ = ["HAVE_NUMBA", "USE_NUMBA", "maybe_njit", "blas_single_thread",
           "pin_blas_threads"]


def _flag_enabled() -> bool:
    raw = os.environ.get("RELAXSOH_NUMBA", "1").strip().lower()
    return raw not in ("0", "false", "off", "no")


try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only on stripped installs
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _flag_enabled()


def maybe_njit(*args, **kwargs):
    """``numba.njit`` when acceleration is on, identity decorator otherwise."""

    def wrap(func):
        if USE_NUMBA:
            return numba.njit(*args, **kwargs)(func)
        return func

    return wrap


try:
    import threadpoolctl
except ImportError:  # pragma: no cover
    threadpoolctl = None


def blas_single_thread():
    """Context manager pinning BLAS to one thread.

    Every matrix in this package is small; on few-vCPU hosts OpenBLAS's
    2-thread synchronization stalls cost 10x more than the factorizations
    themselves, so the linear-algebra-heavy fits run single-threaded.
    """
    if threadpoolctl is None:
        return contextlib.nullcontext()
    return threadpoolctl.threadpool_limits(limits=1, user_api="blas")


def pin_blas_threads():
    """Process-wide version of :func:`blas_single_thread` (CLI entry point)."""
    if threadpoolctl is not None:
        threadpoolctl.threadpool_limits(limits=1, user_api="blas")
