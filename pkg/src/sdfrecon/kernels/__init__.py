"""Hot-kernel dispatch: numba implementations with a pure-numpy fallback.

Import the selected backend's functions; `sdfrecon.backend.active_backend()`
reports which one is live. Both implementations are importable directly
(kernels.numpy_impl / kernels.numba_impl) for the comparison benchmark.
"""

from ..backend import BACKEND

if BACKEND == "numba":
    from .numba_impl import (
        corner_cells_weights,
        dense_indices,
        gather_blend,
        hash_cells,
        mc_collect,
        scatter_blend_grad,
    )
else:
    from .numpy_impl import (
        corner_cells_weights,
        dense_indices,
        gather_blend,
        hash_cells,
        mc_collect,
        scatter_blend_grad,
    )

__all__ = [
    "corner_cells_weights",
    "dense_indices",
    "gather_blend",
    "hash_cells",
    "mc_collect",
    "scatter_blend_grad",
]
