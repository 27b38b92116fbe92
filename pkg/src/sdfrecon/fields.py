"""The four SDF scene parameterizations and the color head.

All variants answer point queries inside the [-1,1]^3 domain with an SDF
value, its spatial gradient, and a geometry feature vector. Queries go
through the autodiff ops, and the spatial gradient is itself produced as
a forward quantity (Jacobian propagation alongside the value), so losses
on the gradient need no second tape.
"""

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import val
from .encoding import HASH_PRIMES, PositionalEncoding, resolution_schedule

DOMAIN_MIN = -1.0
DOMAIN_MAX = 1.0


class FieldEvalError(RuntimeError):
    """Non-finite field output; message carries parameter diagnostics."""


def clamp_to_domain(x):
    """Clamp stray points to the domain cube; returns (points, inside).

    inside is a per-point-per-axis 0/1 float mask used to zero spatial
    gradients of clamped coordinates.
    """
    x = np.asarray(x, dtype=np.float64)
    inside = ((x >= DOMAIN_MIN) & (x <= DOMAIN_MAX)).astype(np.float64)
    return np.clip(x, DOMAIN_MIN, DOMAIN_MAX), inside


def _matmul3(j, w):
    """(N,3,D) x (D,H) -> (N,3,H) through 2-D matmul."""
    n = val(j).shape[0]
    d = val(j).shape[2]
    flat = ad.reshape(j, (n * 3, d))
    out = ad.matmul(flat, w)
    h = val(w).shape[1]
    return ad.reshape(out, (n, 3, h))


class Mlp:
    """Fully connected stack with optional skip re-injection of the input.

    `depth` counts hidden layers of width `hidden`; one linear output
    layer follows. The geometry path calls forward() with the input
    Jacobian to propagate spatial derivatives.
    """

    def __init__(
        self,
        store,
        group,
        in_dim,
        hidden,
        depth,
        out_dim,
        activation="softplus",
        sharpness=100.0,
        skip_at=None,
        init="he",
        sphere_radius=0.5,
        rng=None,
    ):
        if depth < 1:
            raise ValueError("need at least one hidden layer")
        rng = rng or np.random.default_rng(0)
        self.in_dim = in_dim
        self.hidden = hidden
        self.depth = depth
        self.out_dim = out_dim
        self.activation = activation
        self.sharpness = float(sharpness)
        self.skip_at = skip_at
        self.weights = []
        self.biases = []

        dims = []
        for layer in range(depth):
            d_in = in_dim if layer == 0 else hidden
            if skip_at is not None and layer == skip_at and layer > 0:
                d_in = hidden + in_dim
            dims.append((d_in, hidden))
        dims.append((hidden if depth > 0 else in_dim, out_dim))

        for layer, (d_in, d_out) in enumerate(dims):
            is_last = layer == depth
            if init == "geometric":
                w, b = self._geometric_layer(
                    rng, layer, d_in, d_out, is_last, sphere_radius
                )
            else:
                w = rng.normal(0.0, np.sqrt(2.0 / d_in), size=(d_in, d_out))
                b = np.zeros(d_out)
            self.weights.append(store.alloc(group, w))
            self.biases.append(store.alloc(group, b))

    def _geometric_layer(self, rng, layer, d_in, d_out, is_last, radius):
        # sphere-like start: f(x) ~ ||x|| - radius before training
        if is_last:
            w = rng.normal(0.0, 1e-3, size=(d_in, d_out))
            w[:, 0] = rng.normal(np.sqrt(np.pi / d_in), 1e-5, size=d_in)
            b = np.zeros(d_out)
            b[0] = -radius
            return w, b
        w = rng.normal(0.0, np.sqrt(2.0 / d_out), size=(d_in, d_out))
        b = np.zeros(d_out)
        if layer == 0:
            w[3:, :] = 0.0  # only the raw-coordinate inputs act at init
        elif self.skip_at is not None and layer == self.skip_at:
            w[self.hidden + 3 :, :] = 0.0  # zero re-injected encoding rows
        return w, b

    def bind(self, store, tape):
        ws = [store.node(tape, p) if tape else store.view(p) for p in self.weights]
        bs = [store.node(tape, p) if tape else store.view(p) for p in self.biases]
        return ws, bs

    def forward(self, bound, x, jx=None):
        """Evaluate; with jx (N,3,in_dim) also returns the output Jacobian."""
        ws, bs = bound
        h, jh = x, jx
        for layer in range(self.depth):
            if self.skip_at is not None and layer == self.skip_at and layer > 0:
                h = ad.concat([h, x], axis=-1)
                if jh is not None:
                    jh = ad.concat([jh, jx], axis=-1)
            z = ad.add(ad.matmul(h, ws[layer]), bs[layer])
            if jh is not None:
                jz = _matmul3(jh, ws[layer])
            if self.activation == "softplus":
                h = ad.softplus(z, sharpness=self.sharpness)
                if jh is not None:
                    dz = ad.sigmoid(ad.mul(z, self.sharpness))
                    n = val(dz).shape[0]
                    jh = ad.mul(jz, ad.reshape(dz, (n, 1, self.hidden)))
            elif self.activation == "relu":
                h = ad.relu(z)
                if jh is not None:
                    mask = (val(z) > 0).astype(np.float64)
                    jh = ad.mul(jz, mask[:, None, :])
            else:
                raise ValueError(f"unknown activation {self.activation!r}")
        out = ad.add(ad.matmul(h, ws[-1]), bs[-1])
        jout = _matmul3(jh, ws[-1]) if jx is not None else None
        return out, jout


class _GridLevel:
    """One interpolation lattice; dense or hashed storage."""

    def __init__(self, store, resolution, feature_dim, table_size, rng, scale=1e-4):
        self.resolution = int(resolution)
        self.feature_dim = int(feature_dim)
        n_vertices = self.resolution**3
        self.hashed = n_vertices > table_size
        rows = table_size if self.hashed else n_vertices
        self.table = store.alloc(
            "grid", rng.uniform(-scale, scale, size=(rows, feature_dim))
        )
        self.table_size = int(table_size)

    def lookup(self, table, x, inside, need_dfeat):
        r = self.resolution
        gpos = (x - DOMAIN_MIN) / (DOMAIN_MAX - DOMAIN_MIN) * (r - 1)
        corners, w, wg = kernels.corner_cells_weights(gpos, (r, r, r))
        if self.hashed:
            idx = kernels.hash_cells(
                corners, np.asarray(HASH_PRIMES, dtype=np.int64), self.table_size
            )
        else:
            idx = kernels.dense_indices(corners, (r, r, r))
        # chain rule to world units, zeroed where the query was clamped
        scale = (r - 1) / (DOMAIN_MAX - DOMAIN_MIN) * inside
        wg = wg * scale[:, None, :]
        return ad.grid_blend(table, idx, w, wg, need_dfeat=need_dfeat)


def _interp_dense(store, param, resolution, x, inside, tape, need_dfeat):
    """Trilinear interpolation of a dense vertex lattice (any res triple)."""
    res = np.asarray(resolution, dtype=np.int64)
    gpos = (x - DOMAIN_MIN) / (DOMAIN_MAX - DOMAIN_MIN) * (res - 1)
    corners, w, wg = kernels.corner_cells_weights(gpos, res)
    idx = kernels.dense_indices(corners, res)
    scale = (res - 1) / (DOMAIN_MAX - DOMAIN_MIN) * inside
    wg = wg * scale[:, None, :]
    table = store.node(tape, param) if tape else store.view(param)
    return ad.grid_blend(table, idx, w, wg, need_dfeat=need_dfeat)


def lattice_points(resolution):
    """World coords of a vertex lattice over the domain, shape (R,R,R,3)."""
    res = np.asarray(resolution, dtype=np.int64)
    axes = [np.linspace(DOMAIN_MIN, DOMAIN_MAX, r) for r in res]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    return np.stack([gx, gy, gz], axis=-1)


class SingleMlpField:
    """SDF as one MLP over a fixed positional encoding."""

    kind = "mlp"

    def __init__(
        self,
        store,
        octaves=6,
        hidden=256,
        depth=8,
        feature_dim=256,
        skip=True,
        sharpness=100.0,
        sphere_radius=0.5,
        rng=None,
    ):
        self.encoding = PositionalEncoding(octaves)
        self.feature_dim = feature_dim
        skip_at = depth // 2 if (skip and depth >= 2) else None
        self.net = Mlp(
            store,
            "network",
            self.encoding.dim,
            hidden,
            depth,
            1 + feature_dim,
            activation="softplus",
            sharpness=sharpness,
            skip_at=skip_at,
            init="geometric",
            sphere_radius=sphere_radius,
            rng=rng,
        )

    def query(self, store, x, tape=None, need_grad=True, need_feature=True):
        xc, inside = clamp_to_domain(x)
        n = xc.shape[0]
        if need_grad:
            enc, denc = self.encoding.encode_with_gradient(xc)
            denc = denc * inside[:, :, None]
        else:
            enc, denc = self.encoding.encode(xc), None
        out, jout = self.net.forward(self.net.bind(store, tape), enc, denc)
        s = ad.reshape(ad.cols(out, 0, 1), (n,))
        grad = ad.reshape(ad.cols(jout, 0, 1), (n, 3)) if need_grad else None
        feat = ad.cols(out, 1, 1 + self.feature_dim) if need_feature else None
        return {"s": s, "grad": grad, "feat": feat}

    def meta(self):
        return {
            "octaves": self.encoding.octaves,
            "hidden": self.net.hidden,
            "depth": self.net.depth,
            "feature_dim": self.feature_dim,
            "skip": self.net.skip_at is not None,
            "sharpness": self.net.sharpness,
        }


class DenseGridField:
    """SDF values stored directly on a dense lattice, trilinearly blended.

    The geometry feature comes from a paired dense feature lattice; the
    spatial gradient is the interpolant's (piecewise constant per axis
    within a cell).
    """

    kind = "densegrid"

    def __init__(
        self,
        store,
        resolution=128,
        feature_resolution=32,
        feature_dim=16,
        sphere_radius=0.5,
        rng=None,
    ):
        rng = rng or np.random.default_rng(0)
        self.resolution = (
            tuple(resolution)
            if isinstance(resolution, (tuple, list))
            else (int(resolution),) * 3
        )
        self.feature_resolution = int(feature_resolution)
        self.feature_dim = int(feature_dim)
        pts = lattice_points(self.resolution).reshape(-1, 3)
        sdf0 = np.linalg.norm(pts, axis=1) - sphere_radius
        self.sdf_param = store.alloc("grid", sdf0[:, None])
        fr = self.feature_resolution
        self.feat_param = store.alloc(
            "grid", rng.uniform(-1e-4, 1e-4, size=(fr**3, feature_dim))
        )

    def query(self, store, x, tape=None, need_grad=True, need_feature=True):
        xc, inside = clamp_to_domain(x)
        n = xc.shape[0]
        s2, ds2 = _interp_dense(
            store, self.sdf_param, self.resolution, xc, inside, tape, need_grad
        )
        s = ad.reshape(s2, (n,))
        grad = ad.reshape(ds2, (n, 3)) if need_grad else None
        feat = None
        if need_feature:
            fr = (self.feature_resolution,) * 3
            feat, _ = _interp_dense(
                store, self.feat_param, fr, xc, inside, tape, False
            )
        return {"s": s, "grad": grad, "feat": feat}

    def meta(self):
        return {
            "resolution": list(self.resolution),
            "feature_resolution": self.feature_resolution,
            "feature_dim": self.feature_dim,
        }


class _GridDecoderField:
    """Shared machinery: feature lattice(s) + positional encoding -> MLP."""

    def _query_decoder(self, store, x, tape, need_grad, need_feature, levels):
        xc, inside = clamp_to_domain(x)
        n = xc.shape[0]
        if need_grad:
            enc, denc = self.encoding.encode_with_gradient(xc)
            denc = denc * inside[:, :, None]
        else:
            enc, denc = self.encoding.encode(xc), None

        parts, jparts = [enc], [denc]
        for level in levels:
            table = store.node(tape, level.table) if tape else store.view(level.table)
            feat, dfeat = level.lookup(table, xc, inside, need_grad)
            parts.append(feat)
            jparts.append(dfeat)
        full = ad.concat(parts, axis=-1)
        jfull = ad.concat(jparts, axis=-1) if need_grad else None

        out, jout = self.net.forward(self.net.bind(store, tape), full, jfull)
        s = ad.reshape(ad.cols(out, 0, 1), (n,))
        grad = ad.reshape(ad.cols(jout, 0, 1), (n, 3)) if need_grad else None
        feat = ad.cols(out, 1, 1 + self.feature_dim) if need_feature else None
        return {"s": s, "grad": grad, "feat": feat}


class SingleResGridField(_GridDecoderField):
    """One feature lattice decoded by a small MLP, encoding alongside."""

    kind = "singlegrid"

    def __init__(
        self,
        store,
        resolution=64,
        grid_feature_dim=8,
        octaves=6,
        hidden=256,
        depth=2,
        feature_dim=256,
        sharpness=100.0,
        sphere_radius=0.5,
        rng=None,
    ):
        rng = rng or np.random.default_rng(0)
        self.encoding = PositionalEncoding(octaves)
        self.feature_dim = feature_dim
        self.level = _GridLevel(
            store, resolution, grid_feature_dim, resolution**3, rng
        )
        self.net = Mlp(
            store,
            "network",
            self.encoding.dim + grid_feature_dim,
            hidden,
            depth,
            1 + feature_dim,
            activation="softplus",
            sharpness=sharpness,
            init="geometric",
            sphere_radius=sphere_radius,
            rng=rng,
        )

    def query(self, store, x, tape=None, need_grad=True, need_feature=True):
        return self._query_decoder(
            store, x, tape, need_grad, need_feature, [self.level]
        )

    def meta(self):
        return {
            "resolution": self.level.resolution,
            "grid_feature_dim": self.level.feature_dim,
            "octaves": self.encoding.octaves,
            "hidden": self.net.hidden,
            "depth": self.net.depth,
            "feature_dim": self.feature_dim,
            "sharpness": self.net.sharpness,
        }


class MultiResGridField(_GridDecoderField):
    """Geometrically spaced feature lattices, hashed at fine levels."""

    kind = "multigrid"

    def __init__(
        self,
        store,
        levels=16,
        r_min=16,
        r_max=2048,
        level_feature_dim=2,
        table_size=2**19,
        octaves=6,
        hidden=256,
        depth=2,
        feature_dim=256,
        sharpness=100.0,
        sphere_radius=0.5,
        rng=None,
    ):
        rng = rng or np.random.default_rng(0)
        self.encoding = PositionalEncoding(octaves)
        self.feature_dim = feature_dim
        self.r_min, self.r_max = int(r_min), int(r_max)
        self.table_size = int(table_size)
        self.resolutions = resolution_schedule(r_min, r_max, levels)
        self.levels = [
            _GridLevel(store, r, level_feature_dim, table_size, rng)
            for r in self.resolutions
        ]
        self.net = Mlp(
            store,
            "network",
            self.encoding.dim + level_feature_dim * levels,
            hidden,
            depth,
            1 + feature_dim,
            activation="softplus",
            sharpness=sharpness,
            init="geometric",
            sphere_radius=sphere_radius,
            rng=rng,
        )

    def query(self, store, x, tape=None, need_grad=True, need_feature=True):
        return self._query_decoder(
            store, x, tape, need_grad, need_feature, self.levels
        )

    def meta(self):
        return {
            "levels": len(self.levels),
            "r_min": self.r_min,
            "r_max": self.r_max,
            "level_feature_dim": self.levels[0].feature_dim,
            "table_size": self.table_size,
            "octaves": self.encoding.octaves,
            "hidden": self.net.hidden,
            "depth": self.net.depth,
            "feature_dim": self.feature_dim,
            "sharpness": self.net.sharpness,
        }


class ColorHead:
    """RGB prediction from (x, view dir, unit normal, geometry feature).

    View directions get their own positional encoding; the output is
    squashed through a logistic so components stay in [0,1].
    """

    def __init__(
        self, store, feature_dim, hidden=256, depth=2, view_octaves=4, rng=None
    ):
        rng = rng or np.random.default_rng(0)
        self.view_encoding = PositionalEncoding(view_octaves)
        in_dim = 3 + self.view_encoding.dim + 3 + feature_dim
        self.net = Mlp(
            store,
            "network",
            in_dim,
            hidden,
            depth,
            3,
            activation="relu",
            init="he",
            rng=rng,
        )

    def query(self, store, x, view, normal, feat, tape=None):
        """x, view are constant arrays; normal/feat may be tape nodes."""
        x = np.asarray(x, dtype=np.float64)
        venc = self.view_encoding.encode(np.asarray(view, dtype=np.float64))
        inp = ad.concat([x, venc, normal, feat], axis=-1)
        out, _ = self.net.forward(self.net.bind(store, tape), inp, None)
        return ad.sigmoid(out)

    def meta(self):
        return {
            "hidden": self.net.hidden,
            "depth": self.net.depth,
            "view_octaves": self.view_encoding.octaves,
        }


FIELD_KINDS = {
    "mlp": SingleMlpField,
    "densegrid": DenseGridField,
    "singlegrid": SingleResGridField,
    "multigrid": MultiResGridField,
}
