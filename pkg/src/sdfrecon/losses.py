"""Training objective: RGB reconstruction, Eikonal regularization, depth
consistency with per-batch closed-form scale/shift alignment, and normal
consistency. All reductions are sums over the ray batch."""

import numpy as np

from . import autodiff as ad
from .autodiff import val


class DegenerateBatchError(RuntimeError):
    """Scale/shift solve is singular (all rendered depths equal)."""


class NonFiniteLossError(RuntimeError):
    """A loss term went non-finite; message carries the per-term values."""


class LossWeights:
    """Weights for the eikonal, depth, and normal terms."""

    def __init__(self, eikonal=0.1, depth=0.1, normal=0.05):
        if min(eikonal, depth, normal) < 0:
            raise ValueError("loss weights must be non-negative")
        self.eikonal = float(eikonal)
        self.depth = float(depth)
        self.normal = float(normal)


def rgb_loss(rendered, observed, mask=None):
    """Sum over rays of the L1 color residual."""
    resid = ad.absval(ad.sub(rendered, observed))
    if mask is not None:
        n = val(resid).shape[0]
        resid = ad.mul(resid, mask.reshape(n, 1))
    return ad.sumall(resid)


def eikonal_loss(grads):
    """Sum of (||grad f|| - 1)^2 over the sampled points."""
    norms = ad.sqrt(ad.add(ad.sum_axis(ad.square(grads), axis=-1), 1e-24))
    return ad.sumall(ad.square(ad.sub(norms, 1.0)))


def solve_scale_shift(rendered_depth, cue_depth):
    """Closed-form least-squares (w, q) mapping rendered onto cue depth.

    Normal equations of sum_r (w*D(r) + q - Dbar(r))^2; solved per batch.
    Raises DegenerateBatchError when the 2x2 system is singular (all
    rendered depths equal).
    """
    d = np.asarray(val(rendered_depth), dtype=np.float64).reshape(-1)
    db = np.asarray(val(cue_depth), dtype=np.float64).reshape(-1)
    if d.size < 2:
        raise DegenerateBatchError("need at least 2 rays to solve scale/shift")
    n = float(d.size)
    a00 = float(d @ d)
    a01 = float(d.sum())
    b0 = float(d @ db)
    b1 = float(db.sum())
    det = a00 * n - a01 * a01
    if det <= 1e-12 * max(a00 * n, 1.0):
        raise DegenerateBatchError("rendered depths carry no spread")
    w = (n * b0 - a01 * b1) / det
    q = (a00 * b1 - a01 * b0) / det
    return w, q


def depth_loss(rendered_depth, cue_depth, w, q, mask=None):
    """Sum of squared aligned-depth residuals: ||(w*D + q) - Dbar||^2."""
    resid = ad.sub(ad.add(ad.mul(rendered_depth, w), q), cue_depth)
    sq = ad.square(resid)
    if mask is not None:
        sq = ad.mul(sq, mask)
    return ad.sumall(sq)


def normal_loss(rendered_unit, cue_unit, mask=None):
    """Sum of L1 plus angular terms over rays; inputs unit length."""
    n = val(rendered_unit).shape[0]
    l1 = ad.sum_axis(ad.absval(ad.sub(rendered_unit, cue_unit)), axis=-1)
    dot = ad.sum_axis(ad.mul(rendered_unit, cue_unit), axis=-1)
    ang = ad.absval(ad.sub(1.0, dot))
    per_ray = ad.add(l1, ang)
    if mask is not None:
        per_ray = ad.mul(per_ray, mask.reshape(n))
    return ad.sumall(per_ray)


def total_loss(rgb, eikonal, depth, normal, weights):
    """Weighted sum of the four terms; aborts on non-finite parts."""
    parts = {
        "rgb": float(val(rgb)),
        "eikonal": float(val(eikonal)),
        "depth": float(val(depth)),
        "normal": float(val(normal)),
    }
    if not all(np.isfinite(v) for v in parts.values()):
        raise NonFiniteLossError(f"non-finite loss parts: {parts}")
    out = ad.add(rgb, ad.mul(weights.eikonal, eikonal))
    out = ad.add(out, ad.mul(weights.depth, depth))
    return ad.add(out, ad.mul(weights.normal, normal))
