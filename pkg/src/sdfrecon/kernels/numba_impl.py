"""Numba @njit twins of the kernels in numpy_impl.py.

All loops are serial so results are reproducible run to run; gather-heavy
forward passes and the scatter-add backward are the main wins over the
numpy fallback.
"""

import numpy as np
from numba import njit

from .numpy_impl import CORNER_OFFSETS, MC_EDGE_BASE

_CORNERS = np.ascontiguousarray(CORNER_OFFSETS)
_EDGE_BASE = np.ascontiguousarray(MC_EDGE_BASE)


@njit(cache=True)
def _hash_cells(cells, primes, table_size):
    n = cells.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        h = cells[i, 0] * primes[0]
        h ^= cells[i, 1] * primes[1]
        h ^= cells[i, 2] * primes[2]
        out[i] = h % table_size
    return out


def hash_cells(cells, primes, table_size):
    cells = np.ascontiguousarray(cells, dtype=np.int64)
    flat = cells.reshape(-1, 3)
    out = _hash_cells(flat, np.asarray(primes, dtype=np.int64), np.int64(table_size))
    return out.reshape(cells.shape[:-1])


@njit(cache=True)
def _dense_indices(corners, res):
    n = corners.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        out[i] = (corners[i, 0] * res[1] + corners[i, 1]) * res[2] + corners[i, 2]
    return out


def dense_indices(corners, res):
    corners = np.ascontiguousarray(corners, dtype=np.int64)
    flat = corners.reshape(-1, 3)
    out = _dense_indices(flat, np.asarray(res, dtype=np.int64))
    return out.reshape(corners.shape[:-1])


@njit(cache=True)
def _corner_cells_weights(gpos, res, offs):
    n = gpos.shape[0]
    corners = np.empty((n, 8, 3), dtype=np.int64)
    w = np.empty((n, 8))
    wg = np.empty((n, 8, 3))
    fac = np.empty(3)
    frac = np.empty(3)
    base = np.empty(3, dtype=np.int64)
    for i in range(n):
        for a in range(3):
            b = np.int64(np.floor(gpos[i, a]))
            hi = res[a] - 2
            if b > hi:
                b = hi
            if b < 0:
                b = 0
            base[a] = b
            frac[a] = gpos[i, a] - b
        for k in range(8):
            wk = 1.0
            for a in range(3):
                corners[i, k, a] = base[a] + offs[k, a]
                fac[a] = frac[a] if offs[k, a] == 1 else 1.0 - frac[a]
                wk *= fac[a]
            w[i, k] = wk
            for a in range(3):
                g = 1.0 if offs[k, a] == 1 else -1.0
                for b2 in range(3):
                    if b2 != a:
                        g *= fac[b2]
                wg[i, k, a] = g
    return corners, w, wg


def corner_cells_weights(gpos, res):
    gpos = np.ascontiguousarray(gpos, dtype=np.float64)
    return _corner_cells_weights(gpos, np.asarray(res, dtype=np.int64), _CORNERS)


@njit(cache=True)
def _gather_blend(table, idx, w, wg):
    n, _ = idx.shape
    f = table.shape[1]
    feat = np.zeros((n, f))
    dfeat = np.zeros((n, 3, f))
    for i in range(n):
        for k in range(8):
            row = table[idx[i, k]]
            wk = w[i, k]
            for j in range(f):
                feat[i, j] += wk * row[j]
            for a in range(3):
                ga = wg[i, k, a]
                for j in range(f):
                    dfeat[i, a, j] += ga * row[j]
    return feat, dfeat


def gather_blend(table, idx, w, wg):
    return _gather_blend(
        np.ascontiguousarray(table),
        np.ascontiguousarray(idx),
        np.ascontiguousarray(w),
        np.ascontiguousarray(wg),
    )


@njit(cache=True)
def _scatter_blend_grad(grad_table, idx, w, wg, gfeat, gdfeat, use_dfeat):
    n, _ = idx.shape
    f = grad_table.shape[1]
    for i in range(n):
        for k in range(8):
            r = idx[i, k]
            wk = w[i, k]
            for j in range(f):
                grad_table[r, j] += wk * gfeat[i, j]
            if use_dfeat:
                for a in range(3):
                    ga = wg[i, k, a]
                    for j in range(f):
                        grad_table[r, j] += ga * gdfeat[i, a, j]


def scatter_blend_grad(grad_table, idx, w, wg, gfeat, gdfeat):
    use_dfeat = gdfeat is not None
    if gdfeat is None:
        gdfeat = np.zeros((idx.shape[0], 3, grad_table.shape[1]))
    _scatter_blend_grad(
        grad_table,
        np.ascontiguousarray(idx),
        np.ascontiguousarray(w),
        np.ascontiguousarray(wg),
        np.ascontiguousarray(gfeat),
        np.ascontiguousarray(gdfeat),
        use_dfeat,
    )


@njit(cache=True)
def _mc_collect(values, iso, tri_table, tri_counts, ebase):
    rx, ry, rz = values.shape
    total = 0
    for ix in range(rx - 1):
        for iy in range(ry - 1):
            for iz in range(rz - 1):
                ci = 0
                if values[ix, iy, iz] < iso:
                    ci |= 1
                if values[ix + 1, iy, iz] < iso:
                    ci |= 2
                if values[ix + 1, iy + 1, iz] < iso:
                    ci |= 4
                if values[ix, iy + 1, iz] < iso:
                    ci |= 8
                if values[ix, iy, iz + 1] < iso:
                    ci |= 16
                if values[ix + 1, iy, iz + 1] < iso:
                    ci |= 32
                if values[ix + 1, iy + 1, iz + 1] < iso:
                    ci |= 64
                if values[ix, iy + 1, iz + 1] < iso:
                    ci |= 128
                total += tri_counts[ci]
    out = np.empty((total, 3), dtype=np.int64)
    k = 0
    for ix in range(rx - 1):
        for iy in range(ry - 1):
            for iz in range(rz - 1):
                ci = 0
                if values[ix, iy, iz] < iso:
                    ci |= 1
                if values[ix + 1, iy, iz] < iso:
                    ci |= 2
                if values[ix + 1, iy + 1, iz] < iso:
                    ci |= 4
                if values[ix, iy + 1, iz] < iso:
                    ci |= 8
                if values[ix, iy, iz + 1] < iso:
                    ci |= 16
                if values[ix + 1, iy, iz + 1] < iso:
                    ci |= 32
                if values[ix + 1, iy + 1, iz + 1] < iso:
                    ci |= 64
                if values[ix, iy + 1, iz + 1] < iso:
                    ci |= 128
                nt = tri_counts[ci]
                for t in range(nt):
                    for j in range(3):
                        e = tri_table[ci, 3 * t + j]
                        bx = ix + ebase[e, 0]
                        by = iy + ebase[e, 1]
                        bz = iz + ebase[e, 2]
                        out[k, j] = 3 * ((bx * ry + by) * rz + bz) + ebase[e, 3]
                    k += 1
    return out


def mc_collect(values, iso, tri_table, tri_counts):
    return _mc_collect(
        np.ascontiguousarray(values, dtype=np.float64),
        float(iso),
        np.ascontiguousarray(tri_table, dtype=np.int64),
        np.ascontiguousarray(tri_counts, dtype=np.int64),
        _EDGE_BASE,
    )
