"""Numba switch.

Hot loops are written once as plain Python over numpy arrays. When numba is
importable and ``LPVQMI_DISABLE_NUMBA`` is unset (or ``0``), they are compiled
with ``@njit``; otherwise callers get the vectorised numpy fallback.
"""
import os

_FLAG = os.environ.get("LPVQMI_DISABLE_NUMBA", "0").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

USE_NUMBA = numba is not None and _FLAG not in ("1", "true", "yes", "on")


def njit(fn):
    """Compile ``fn`` with numba when available, else return it unchanged."""
    if numba is None:
        return fn
    return numba.njit(cache=True)(fn)
