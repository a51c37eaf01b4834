"""JIT switch for the hot kernels.

Set ``NEURALCLOTH_DISABLE_JIT=1`` before import to run every kernel through
its pure-numpy path instead of the numba-compiled loops.
"""

import os

_FLAG = os.environ.get("NEURALCLOTH_DISABLE_JIT", "").strip().lower()

try:
    import numba as nb

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _FLAG not in ("1", "true", "yes", "on")


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise an identity decorator."""
    if HAVE_NUMBA:
        kwargs.setdefault("cache", True)
        return nb.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]):
        return args[0]
    return lambda func: func
