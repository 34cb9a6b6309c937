"""Kernel backend selection.

Hot loops (Monte Carlo iteration, long-orbit histograms, Ulam assembly) have a
numba implementation and a vectorised numpy implementation.  The numba path is
used when numba imports cleanly and ``LEAKYMAP_BACKEND`` is not ``numpy``.
"""

import os

_requested = os.environ.get("LEAKYMAP_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ValueError(f"LEAKYMAP_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a hard dependency
    _numba = None

USE_NUMBA = _requested == "numba" and _numba is not None


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise an identity decorator."""
    if _numba is not None:
        return _numba.njit(*args, **kwargs)

    def wrap(fn):
        return fn

    if len(args) == 1 and callable(args[0]):
        return args[0]
    return wrap


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"


def set_threads(n: int | None) -> None:
    """Limit numba's thread pool; a no-op on the numpy path."""
    if n is None or _numba is None:
        return
    n = max(1, min(int(n), _numba.config.NUMBA_NUM_THREADS))
    _numba.set_num_threads(n)
