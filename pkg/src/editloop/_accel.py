"""Optional numba acceleration.

Set ``EDITLOOP_DISABLE_NUMBA=1`` to force the pure-numpy kernels, e.g. to
compare timings or to debug without JIT compilation in the way.
"""
import os

_FLAG = os.environ.get("EDITLOOP_DISABLE_NUMBA", "").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

USE_NUMBA = numba is not None and _FLAG not in ("1", "true", "yes", "on")


def njit(fn):
    """Compile ``fn`` with numba when available, otherwise return it unchanged."""
    if numba is None:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)
