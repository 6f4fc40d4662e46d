"""Numba acceleration switch.

Hot geometry kernels ship in two variants: a loop version compiled with
``numba.njit`` and a vectorized pure-numpy fallback.  The environment
variable ``DYNSURF_NUMBA`` selects the path at import time ("0" disables
numba; anything else, or unset, enables it when numba imports cleanly).
``benchmarks/bench_kernels.py`` compares the two.
"""

import os

_flag = os.environ.get("DYNSURF_NUMBA", "1").strip().lower()
NUMBA_REQUESTED = _flag not in ("0", "false", "no", "off")

if NUMBA_REQUESTED:
    try:
        from numba import njit

        NUMBA_AVAILABLE = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        NUMBA_AVAILABLE = False
else:
    NUMBA_AVAILABLE = False

USE_NUMBA = NUMBA_REQUESTED and NUMBA_AVAILABLE

if not USE_NUMBA:

    def njit(*args, **kwargs):  # noqa: D103 - passthrough decorator
        if args and callable(args[0]) and len(args) == 1 and not kwargs:
            return args[0]

        def wrap(fn):
            return fn

        return wrap
