"""Backend selection for the hot numeric kernels.

The counter RNG, Box-Muller transform, and Jacobi eigensolver each have two
implementations: numba @njit scalar loops and vectorized numpy. The active
path is fixed once at import time from the DIFFUSIONLAB_BACKEND environment
variable ("numba" or "numpy"); unset or "auto" picks numba when importable.

The uint64 counter streams are exact integer arithmetic and bitwise
identical on both paths. Transcendentals (log/cos in Box-Muller, rotations
in Jacobi) may differ between numba's libm calls and numpy's vectorized
routines by a few ulps, so reproducibility guarantees are scoped to a fixed
backend.
"""

import os

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - depends on the environment
    numba = None
    HAS_NUMBA = False


def _select() -> bool:
    requested = os.environ.get("DIFFUSIONLAB_BACKEND", "").strip().lower()
    if requested == "numpy":
        return False
    if requested == "numba":
        if not HAS_NUMBA:
            raise ImportError("DIFFUSIONLAB_BACKEND=numba but numba is not importable")
        return True
    if requested not in ("", "auto"):
        raise ValueError(f"unknown DIFFUSIONLAB_BACKEND value {requested!r}")
    return HAS_NUMBA


USE_NUMBA = _select()
BACKEND = "numba" if USE_NUMBA else "numpy"


def jit(fn):
    """numba.njit(cache=True) under the numba backend, identity otherwise."""
    if USE_NUMBA:
        return numba.njit(cache=True)(fn)
    return fn
