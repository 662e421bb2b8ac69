"""Backend switch for the compiled kernels.

Set ``SATQKD_DISABLE_NUMBA=1`` in the environment to force the pure-numpy
path. The flag is read once at import time.
"""

import os

_FLAG = os.environ.get("SATQKD_DISABLE_NUMBA", "").strip().lower()

try:
    import numba  # noqa: F401
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _FLAG not in ("1", "true", "yes", "on")


def njit(func):
    """Compile ``func`` with numba when available, otherwise return it as is."""
    if not HAVE_NUMBA:
        return func
    from numba import njit as _njit
    return _njit(cache=True, nogil=True)(func)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
