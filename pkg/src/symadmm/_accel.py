"""Numba switch.

Set ``SYMADMM_DISABLE_NUMBA=1`` before import to force the pure-numpy kernels.
"""

import os

_FLAG = os.environ.get("SYMADMM_DISABLE_NUMBA", "").strip().lower()

try:
    import numba  # noqa: F401
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda fn: fn


USE_NUMBA = HAVE_NUMBA and _FLAG not in ("1", "true", "yes", "on")


def backend():
    return "numba" if USE_NUMBA else "numpy"
