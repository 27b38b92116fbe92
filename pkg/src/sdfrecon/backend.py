"""Kernel backend selection.

The hot inner loops (grid gather/scatter, spatial hashing, marching cubes
cell sweep) exist twice: a numba @njit implementation and a pure-numpy
fallback. The env var SDFRECON_BACKEND picks one at import time:

    SDFRECON_BACKEND=numba   force numba (error if unavailable)
    SDFRECON_BACKEND=numpy   force the pure-numpy path
    unset                    numba if importable, else numpy
"""

import os

_ENV_VAR = "SDFRECON_BACKEND"


def _detect() -> str:
    requested = os.environ.get(_ENV_VAR, "").strip().lower()
    if requested == "numpy":
        return "numpy"
    if requested == "numba":
        import numba  # noqa: F401  (raise ImportError if missing)

        return "numba"
    if requested not in ("", "auto"):
        raise ValueError(
            f"{_ENV_VAR}={requested!r} not understood (use 'numba' or 'numpy')"
        )
    try:
        import numba  # noqa: F401

        return "numba"
    except ImportError:
        return "numpy"


BACKEND = _detect()


def active_backend() -> str:
    """Name of the kernel backend selected at import time."""
    return BACKEND
