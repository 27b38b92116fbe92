"""Differentiable volume rendering: cameras, ray generation, point
sampling, the SDF-to-density transform, and quadrature of color, depth,
and normals along rays."""

import numpy as np

from . import autodiff as ad
from .autodiff import val

# circumradius of the [-1,1]^3 domain; rays are sampled where they can
# intersect this bounding sphere
DEFAULT_BOUND_RADIUS = float(np.sqrt(3.0))


class Camera:
    """Pinhole camera: intrinsics in pixels, world-from-camera pose.

    Camera frame: x right, y down, z forward through the principal point.
    """

    def __init__(self, fx, fy, cx, cy, rotation, translation, width, height):
        self.fx, self.fy = float(fx), float(fy)
        self.cx, self.cy = float(cx), float(cy)
        self.rotation = np.asarray(rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(translation, dtype=np.float64).reshape(3)
        self.width, self.height = int(width), int(height)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        err = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if err > 1e-8:
            raise ValueError(f"rotation not orthonormal (|R^T R - I| = {err:.2e})")

    @classmethod
    def look_at(cls, position, target, up, fx, fy, cx, cy, width, height):
        position = np.asarray(position, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - position
        forward = forward / np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, dtype=np.float64))
        nr = np.linalg.norm(right)
        if nr < 1e-9:
            raise ValueError("view direction parallel to up vector")
        right /= nr
        down = np.cross(forward, right)
        rot = np.stack([right, down, forward], axis=1)
        return cls(fx, fy, cx, cy, rot, position, width, height)

    def world_from_camera(self):
        """4x4 row-major pose matrix."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def optical_axis(self):
        return self.rotation[:, 2].copy()


class RayBatch:
    """Rays with unit world directions and per-ray near/far bounds."""

    def __init__(self, origins, directions, pixels, near, far):
        self.origins = np.asarray(origins, dtype=np.float64)
        self.directions = np.asarray(directions, dtype=np.float64)
        self.pixels = np.asarray(pixels, dtype=np.float64)
        self.near = np.asarray(near, dtype=np.float64)
        self.far = np.asarray(far, dtype=np.float64)
        norms = np.linalg.norm(self.directions, axis=-1)
        if np.abs(norms - 1.0).max() > 1e-8:
            raise ValueError("ray directions must be unit length")
        if not np.all(self.near < self.far):
            raise ValueError("need near < far for every ray")

    def __len__(self):
        return self.origins.shape[0]


def generate_rays(camera, pixels, bound_radius=DEFAULT_BOUND_RADIUS):
    """Rays through the given pixel coordinates (continuous, e.g. centers).

    Near/far come from intersecting the scene bounding sphere around the
    origin; rays missing it still get the tangent-window bounds.
    """
    pixels = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
    if pixels.shape[-1] != 2:
        raise ValueError("pixels must be (N, 2)")
    bad = (
        (pixels[:, 0] < 0)
        | (pixels[:, 0] > camera.width)
        | (pixels[:, 1] < 0)
        | (pixels[:, 1] > camera.height)
    )
    if bad.any():
        raise ValueError(f"{int(bad.sum())} pixel(s) outside image bounds")
    d_cam = np.stack(
        [
            (pixels[:, 0] - camera.cx) / camera.fx,
            (pixels[:, 1] - camera.cy) / camera.fy,
            np.ones(pixels.shape[0]),
        ],
        axis=1,
    )
    d_world = d_cam @ camera.rotation.T
    d_world /= np.linalg.norm(d_world, axis=1, keepdims=True)
    origins = np.broadcast_to(camera.translation, d_world.shape).copy()
    t_mid = -(origins * d_world).sum(axis=1)
    near = np.maximum(1e-3, t_mid - bound_radius)
    far = np.maximum(near + 1e-3, t_mid + bound_radius)
    return RayBatch(origins, d_world, pixels, near, far)


# ---------------------------------------------------------------------------
# sampling


def stratified_samples(rng, near, far, count):
    """One uniform sample per stratum of [near, far]; near/far are (R,)."""
    n_rays = near.shape[0]
    u = rng.uniform(size=(n_rays, count))
    edges = np.arange(count) / count
    span = (far - near)[:, None]
    return near[:, None] + span * (edges[None, :] + u / count)


def importance_samples(rng, near, far, weights, count):
    """Inverse-CDF draws over the coarse strata, uniform within a stratum.

    weights: (R, M) quadrature weights of the stratified coarse samples;
    stratum i inherits its sample's weight.
    """
    n_rays, m = weights.shape
    p = weights + 1e-5  # keep the cdf strictly increasing
    cdf = np.cumsum(p, axis=1)
    cdf = cdf / cdf[:, -1:]
    u = rng.uniform(size=(n_rays, count))
    idx = np.empty((n_rays, count), dtype=np.int64)
    for r in range(n_rays):
        idx[r] = np.searchsorted(cdf[r], u[r], side="right")
    idx = np.minimum(idx, m - 1)
    lo = np.concatenate([np.zeros((n_rays, 1)), cdf[:, :-1]], axis=1)
    pr = np.take_along_axis(cdf - lo, idx, axis=1)
    ur = (u - np.take_along_axis(lo, idx, axis=1)) / np.maximum(pr, 1e-300)
    span = (far - near)[:, None] / m
    return near[:, None] + span * (idx + np.clip(ur, 0.0, 1.0))


class SampleSet:
    """Sorted per-ray sample depths with spacings (last one far-capped)."""

    def __init__(self, t, far_cap):
        self.t = np.asarray(t, dtype=np.float64)
        if np.any(np.diff(self.t, axis=1) < 0):
            raise ValueError("sample depths must be sorted ascending")
        delta = np.diff(self.t, axis=1)
        last = np.full((self.t.shape[0], 1), float(far_cap))
        self.delta = np.concatenate([delta, last], axis=1)

    @property
    def count(self):
        return self.t.shape[1]


def sample_points(
    rays,
    field,
    store,
    log_beta,
    n_coarse,
    n_fine,
    rng,
    far_cap=None,
    paper_literal=False,
):
    """Stratified coarse pass, then importance samples from its weights.

    The coarse pass queries SDF values only (no gradients, not recorded);
    its quadrature weights pick the fine samples. Returns a SampleSet of
    the merged, sorted depths.
    """
    t_coarse = stratified_samples(rng, rays.near, rays.far, n_coarse)
    if far_cap is None:
        far_cap = float(np.mean(rays.far - rays.near) / max(n_coarse + n_fine, 1))
    if n_fine > 0:
        pts = (
            rays.origins[:, None, :] + t_coarse[..., None] * rays.directions[:, None, :]
        ).reshape(-1, 3)
        s = val(
            field.query(store, pts, need_grad=False, need_feature=False)["s"]
        ).reshape(t_coarse.shape)
        sigma = val(density_from_sdf(s, log_beta, paper_literal=paper_literal))
        delta = np.diff(t_coarse, axis=1)
        delta = np.concatenate([delta, np.full((len(rays), 1), far_cap)], axis=1)
        w, _ = quadrature_weights(sigma, delta)
        t_fine = importance_samples(rng, rays.near, rays.far, val(w), n_fine)
        t = np.sort(np.concatenate([t_coarse, t_fine], axis=1), axis=1)
    else:
        t = t_coarse
    return SampleSet(t, far_cap)


# ---------------------------------------------------------------------------
# density and quadrature


def density_from_sdf(s, log_beta, paper_literal=False):
    """Laplace-CDF density with learnable sharpness beta (log-space).

    Interior points (s < 0) receive high density, approaching 1/beta; the
    exterior decays to zero; sigma(0) = 1/(2 beta). The published piecewise
    form reads with the opposite sign convention (low density inside),
    which inverts surfaces when rendered; paper_literal=True reproduces
    that printed variant for comparison.
    """
    inv_beta = ad.exp(ad.neg(log_beta))
    decay = ad.exp(ad.neg(ad.mul(ad.absval(s), inv_beta)))
    inside = val(s) < 0 if not paper_literal else val(s) > 0
    m = inside.astype(np.float64)
    return ad.mul(inv_beta, ad.add(m, ad.mul(0.5 - m, decay)))


def quadrature_weights(sigma, delta):
    """Volume rendering weights w_i = T_i * alpha_i.

    T via the exponential of the exclusive cumulative optical depth,
    alpha_i = 1 - exp(-sigma_i delta_i). Returns (w, end_transmittance).
    """
    sd = ad.mul(sigma, delta)
    trans = ad.exp(ad.neg(ad.exclusive_cumsum(sd, axis=-1)))
    alpha = ad.sub(1.0, ad.exp(ad.neg(sd)))
    w = ad.mul(trans, alpha)
    end_trans = ad.exp(ad.neg(ad.sum_axis(sd, axis=-1)))
    return w, end_trans


def composite(w, per_sample, axis=1):
    """Weighted sum of a per-sample quantity along the sample axis."""
    if val(per_sample).ndim == 3:
        n, m = val(w).shape
        w = ad.reshape(w, (n, m, 1))
    return ad.sum_axis(ad.mul(w, per_sample), axis=axis)


def render_samples(w, end_trans, colors, t, normals, background=None):
    """Quadrature of color/depth/normal plus opacity for a sample grid.

    colors (R,M,3), t (R,M) constant, normals (R,M,3). background, if
    given, composites the residual transmittance onto the color.
    """
    rgb = composite(w, colors)
    if background is not None:
        n = val(end_trans).shape[0]
        bg = np.asarray(background, dtype=np.float64).reshape(1, 3)
        rgb = ad.add(rgb, ad.mul(ad.reshape(end_trans, (n, 1)), bg))
    depth = composite(w, t)
    normal = composite(w, normals)
    opacity = ad.sum_axis(w, axis=-1)
    return {"rgb": rgb, "depth": depth, "normal": normal, "opacity": opacity}


def normalize_rows(v):
    """Unit-length rows; tiny epsilon keeps masked zero rows finite."""
    sq = ad.sum_axis(ad.square(v), axis=-1, keepdims=True)
    return ad.div(v, ad.sqrt(ad.add(sq, 1e-24)))
