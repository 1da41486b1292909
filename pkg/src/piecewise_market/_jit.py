"""Optional numba acceleration.

Set ``PIECEWISE_MARKET_NUMBA=0`` to force the pure-numpy kernels even when
numba is importable.
"""

import os


def _noop_jit(*args, **kwargs):
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def wrap(f):
        return f

    return wrap


def _have_numba():
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


HAVE_NUMBA = _have_numba()
USE_NUMBA = HAVE_NUMBA and os.environ.get("PIECEWISE_MARKET_NUMBA", "1") not in ("0", "false", "no")

if HAVE_NUMBA:
    from numba import njit
else:
    njit = _noop_jit


def thread_cap():
    """Parallelism cap from ``PIECEWISE_MARKET_THREADS`` (None when unset)."""
    raw = os.environ.get("PIECEWISE_MARKET_THREADS")
    if not raw:
        return None
    cap = int(raw)
    if cap < 1:
        raise ValueError("PIECEWISE_MARKET_THREADS must be >= 1")
    return cap
