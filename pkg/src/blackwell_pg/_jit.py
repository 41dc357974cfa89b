"""Optional numba acceleration.

Hot loops are written once as plain Python over numpy arrays and compiled
with ``numba.njit`` unless ``BLACKWELL_PG_NUMBA=0`` is set in the
environment (or numba is not importable).  The uncompiled function is always
reachable through ``.py_func`` so both paths can be tested side by side.
"""
from __future__ import annotations

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_FLAG = os.environ.get("BLACKWELL_PG_NUMBA", "1").strip().lower()
USE_NUMBA = numba is not None and _FLAG not in ("0", "false", "no", "off")


class _Interpreted:
    """Stand-in for a numba dispatcher when compilation is disabled."""

    def __init__(self, fn):
        self.py_func = fn
        self.__name__ = fn.__name__
        self.__doc__ = fn.__doc__
        self.__wrapped__ = fn

    def __call__(self, *args):
        return self.py_func(*args)


def kernel(fn):
    """Compile ``fn`` in nopython mode, or keep it interpreted."""
    if USE_NUMBA:
        return numba.njit(cache=True, nogil=True)(fn)
    return _Interpreted(fn)


def backend() -> str:
    return "numba" if USE_NUMBA else "python"
