"""Numba switch.

Set ``ACRL_DISABLE_NUMBA=1`` to run every kernel through its pure-numpy
twin. The flag is read once at import time.
"""

from __future__ import annotations

import os

DISABLE_ENV = "ACRL_DISABLE_NUMBA"

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a hard dep in practice
    _numba = None


def _flag_off(value: str | None) -> bool:
    return value is None or value.strip().lower() in ("", "0", "false", "no")


USE_NUMBA: bool = _numba is not None and _flag_off(os.environ.get(DISABLE_ENV))


def njit(func):
    """Compile ``func`` with numba in nopython mode (cached on disk)."""
    if _numba is None:
        return func
    return _numba.njit(cache=True, nogil=True)(func)


def pick(numba_impl, numpy_impl):
    return numba_impl if USE_NUMBA else numpy_impl
