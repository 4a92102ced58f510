"""Numba switch.

Hot kernels are written once in numba-compatible Python and have a separate
numpy path.  Set ``BANKFORGE_DISABLE_NUMBA=1`` to force the numpy path (also
used automatically when numba cannot be imported).
"""
import os

_flag = os.environ.get("BANKFORGE_DISABLE_NUMBA", "").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

USE_NUMBA = numba is not None and _flag not in ("1", "true", "yes")


def njit(fn):
    """Compile ``fn`` with numba when available; otherwise return it unchanged."""
    if numba is None:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


def thread_cap():
    try:
        return max(1, int(os.environ.get("BANKFORGE_THREADS", "1")))
    except ValueError:
        return 1
