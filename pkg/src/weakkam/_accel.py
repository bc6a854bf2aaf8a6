"""Backend selection for the hot kernels.

``WEAKKAM_NUMBA=0`` forces the pure-numpy path; otherwise numba is used when
it imports.  ``WEAKKAM_THREADS`` caps the worker count of the per-lambda
thread pool.
"""

import os

_FALSE = {"0", "false", "no", "off"}

try:  # pragma: no cover - exercised implicitly
    import numba as _numba
except ImportError:  # pragma: no cover
    _numba = None

NUMBA_AVAILABLE = _numba is not None
USE_NUMBA = NUMBA_AVAILABLE and os.environ.get("WEAKKAM_NUMBA", "1").strip().lower() not in _FALSE


def njit(func):
    """``numba.njit(cache=True, nogil=True)`` when numba is importable, else identity."""
    if _numba is None:
        return func
    return _numba.njit(cache=True, nogil=True)(func)


def thread_count() -> int:
    raw = os.environ.get("WEAKKAM_THREADS", "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"WEAKKAM_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"WEAKKAM_THREADS must be a positive integer, got {raw!r}")
    return n


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
