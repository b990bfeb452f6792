"""Numba switch shared by the hot kernels.

Set ``THERMOFLOOD_NUMBA=0`` to force the pure-numpy paths (useful for
debugging and for comparing the two backends in ``benchmarks/``).
"""

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is an optional speedup
    numba = None


def numba_enabled():
    flag = os.environ.get("THERMOFLOOD_NUMBA", "1").strip().lower()
    return numba is not None and flag not in ("0", "false", "no", "off")


def njit(func):
    """Compile ``func`` with numba when available, else return it unchanged."""
    if numba is None:
        return func
    return numba.njit(cache=True, nogil=True)(func)
