"""Signed-distance-field scene reconstruction from posed images.

Optimizes one of four SDF scene representations with differentiable
volume rendering supervised by RGB plus synthetic depth/normal cues, and
evaluates extracted meshes against ground truth.
"""

from .backend import active_backend

__version__ = "0.1.0"

__all__ = ["active_backend", "__version__"]
