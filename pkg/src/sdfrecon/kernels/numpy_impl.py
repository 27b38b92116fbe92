"""Pure-numpy implementations of the hot kernels.

Reference semantics for the numba twins in numba_impl.py; every function
here must stay drop-in compatible. Summation orders may differ between
backends (bitwise results can differ in the last ulp), but each backend
is deterministic on its own.
"""

import numpy as np

# corner k of a cell, k = ox + 2*oy + 4*oz
CORNER_OFFSETS = np.array(
    [
        [0, 0, 0],
        [1, 0, 0],
        [0, 1, 0],
        [1, 1, 0],
        [0, 0, 1],
        [1, 0, 1],
        [0, 1, 1],
        [1, 1, 1],
    ],
    dtype=np.int64,
)


def hash_cells(cells, primes, table_size):
    """XOR-fold integer cell coords with per-axis primes, modulo table_size.

    cells: (N, 3) int64, primes: length-3 int64, table_size: power of two.
    """
    cells = np.asarray(cells, dtype=np.int64)
    h = cells[..., 0] * primes[0]
    h = h ^ (cells[..., 1] * primes[1])
    h = h ^ (cells[..., 2] * primes[2])
    return h % np.int64(table_size)


def dense_indices(corners, res):
    """Row-major linear index of integer vertex coords. corners: (..., 3)."""
    corners = np.asarray(corners, dtype=np.int64)
    return (corners[..., 0] * res[1] + corners[..., 1]) * res[2] + corners[..., 2]


def corner_cells_weights(gpos, res):
    """Trilinear corner coords, weights, and weight gradients in grid units.

    gpos: (N, 3) float positions in grid coordinates (0..res-1 per axis,
    already clamped by the caller). Returns (corners (N,8,3) int64,
    w (N,8), wg (N,8,3) = dw/dgpos).
    """
    gpos = np.asarray(gpos, dtype=np.float64)
    res = np.asarray(res, dtype=np.int64)
    base = np.floor(gpos).astype(np.int64)
    base = np.minimum(base, res - 2)
    base = np.maximum(base, 0)
    frac = gpos - base

    corners = base[:, None, :] + CORNER_OFFSETS[None, :, :]

    # per-axis weight factor: frac if corner offset 1 else 1-frac
    off = CORNER_OFFSETS[None, :, :].astype(np.float64)
    fac = off * frac[:, None, :] + (1.0 - off) * (1.0 - frac[:, None, :])  # (N,8,3)
    w = fac[:, :, 0] * fac[:, :, 1] * fac[:, :, 2]

    dfac = 2.0 * off - 1.0  # +1 where offset 1, -1 where 0
    wg = np.empty((gpos.shape[0], 8, 3))
    wg[:, :, 0] = dfac[:, :, 0] * fac[:, :, 1] * fac[:, :, 2]
    wg[:, :, 1] = fac[:, :, 0] * dfac[:, :, 1] * fac[:, :, 2]
    wg[:, :, 2] = fac[:, :, 0] * fac[:, :, 1] * dfac[:, :, 2]
    return corners, w, wg


def gather_blend(table, idx, w, wg):
    """Blend 8 gathered table rows per point.

    table: (T, F), idx: (N, 8) int64, w: (N, 8), wg: (N, 8, 3).
    Returns (feat (N, F), dfeat (N, 3, F)); dfeat is per grid unit.
    """
    rows = table[idx]  # (N,8,F)
    feat = np.einsum("nk,nkf->nf", w, rows)
    dfeat = np.einsum("nka,nkf->naf", wg, rows)
    return feat, dfeat


def scatter_blend_grad(grad_table, idx, w, wg, gfeat, gdfeat):
    """Accumulate gather_blend adjoints into grad_table (in place).

    gdfeat may be None when the spatial-gradient output was unused.
    """
    contrib = w[:, :, None] * gfeat[:, None, :]  # (N,8,F)
    if gdfeat is not None:
        contrib = contrib + np.einsum("nka,naf->nkf", wg, gdfeat)
    np.add.at(grad_table, idx.reshape(-1), contrib.reshape(-1, contrib.shape[-1]))


def mc_collect(values, iso, tri_table, tri_counts):
    """Sweep all cells of a scalar lattice and emit triangle edge ids.

    values: (Rx, Ry, Rz) float64. Returns (K, 3) int64 of global edge ids,
    edge id = 3 * (ix*Ry*Rz + iy*Rz + iz) + axis. Triangle order matches
    the numba twin: cell-major (x, y, z loops), slot-minor.
    """
    rx, ry, rz = values.shape
    below = values < iso
    ci = np.zeros((rx - 1, ry - 1, rz - 1), dtype=np.int64)
    # cube corner numbering: v0..v7 per the classic polygoniser layout
    corner_xyz = [
        (0, 0, 0),
        (1, 0, 0),
        (1, 1, 0),
        (0, 1, 0),
        (0, 0, 1),
        (1, 0, 1),
        (1, 1, 1),
        (0, 1, 1),
    ]
    for bit, (dx, dy, dz) in enumerate(corner_xyz):
        ci |= below[dx : dx + rx - 1, dy : dy + ry - 1, dz : dz + rz - 1] << bit

    ci_flat = ci.reshape(-1)
    counts = tri_counts[ci_flat]
    total = int(counts.sum())
    out = np.empty((total, 3), dtype=np.int64)
    if total == 0:
        return out
    offsets = np.concatenate(([0], np.cumsum(counts)))[:-1]

    ncyz = (ry - 1) * (rz - 1)
    cell_flat = np.arange(ci_flat.shape[0], dtype=np.int64)
    cx = cell_flat // ncyz
    cy = (cell_flat % ncyz) // (rz - 1)
    cz = cell_flat % (rz - 1)

    # local edge -> (base vertex offset, axis)
    ebase = MC_EDGE_BASE
    for t in range(5):
        sel = counts > t
        if not sel.any():
            break
        rows = offsets[sel] + t
        edges = tri_table[ci_flat[sel], 3 * t : 3 * t + 3]  # (M,3)
        bx = cx[sel][:, None] + ebase[edges, 0]
        by = cy[sel][:, None] + ebase[edges, 1]
        bz = cz[sel][:, None] + ebase[edges, 2]
        axis = ebase[edges, 3]
        out[rows] = 3 * ((bx * ry + by) * rz + bz) + axis
    return out


# local cube edge -> (dx, dy, dz, axis) of its lattice base vertex
MC_EDGE_BASE = np.array(
    [
        [0, 0, 0, 0],  # e0: v0-v1, +x
        [1, 0, 0, 1],  # e1: v1-v2, +y
        [0, 1, 0, 0],  # e2: v3-v2, +x
        [0, 0, 0, 1],  # e3: v0-v3, +y
        [0, 0, 1, 0],  # e4: v4-v5, +x
        [1, 0, 1, 1],  # e5: v5-v6, +y
        [0, 1, 1, 0],  # e6: v7-v6, +x
        [0, 0, 1, 1],  # e7: v4-v7, +y
        [0, 0, 0, 2],  # e8: v0-v4, +z
        [1, 0, 0, 2],  # e9: v1-v5, +z
        [1, 1, 0, 2],  # e10: v2-v6, +z
        [0, 1, 0, 2],  # e11: v3-v7, +z
    ],
    dtype=np.int64,
)
