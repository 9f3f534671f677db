"""numba switch.

Set ``UATRAIN_DISABLE_NUMBA=1`` before import to run every kernel through
its pure-numpy twin.
"""

from __future__ import annotations

import os

_DISABLED = os.environ.get("UATRAIN_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError("numba disabled via UATRAIN_DISABLE_NUMBA")
    from numba import njit as _njit

    NUMBA_ENABLED = True
except ImportError:
    NUMBA_ENABLED = False
    _njit = None


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise a no-op decorator."""
    if NUMBA_ENABLED:
        return _njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def decorator(func):
        return func

    return decorator


def pick(fast, slow):
    """Return the compiled kernel when numba is on, else the numpy path."""
    return fast if NUMBA_ENABLED else slow
