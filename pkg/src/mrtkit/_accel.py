"""Backend selection for the hot kernels.

Numba is used when it is importable and the environment variable
``MRTKIT_NUMBA`` is not set to a false value (``0``, ``false``, ``no``,
``off``).  Both backends are always importable from
:mod:`mrtkit.kernels` so they can be compared against each other.
"""
import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional extra
    numba = None
    HAVE_NUMBA = False

_FALSE = {"0", "false", "no", "off"}

USE_NUMBA = HAVE_NUMBA and os.environ.get("MRTKIT_NUMBA", "1").strip().lower() not in _FALSE


def njit(fn):
    """Compile ``fn`` in nopython mode when numba is installed, else return it."""
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
