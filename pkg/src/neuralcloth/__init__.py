"""Unsupervised neural cloth dynamics with a physics-based training loss.

Hot kernels are numba-compiled; set ``NEURALCLOTH_DISABLE_JIT=1`` before
import to use the pure-numpy implementations instead.
"""

__version__ = "0.1.0"

from ._jit import USE_NUMBA  # noqa: E402

__all__ = ["USE_NUMBA", "__version__"]
