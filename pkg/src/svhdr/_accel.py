"""Numba switch.

Set ``SVHDR_DISABLE_NUMBA=1`` before import to force the pure-numpy kernels.
"""
import os

_DISABLED = os.environ.get("SVHDR_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError("numba disabled by SVHDR_DISABLE_NUMBA")
    from numba import njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda fn: fn


def backend():
    return "numba" if HAS_NUMBA else "numpy"
