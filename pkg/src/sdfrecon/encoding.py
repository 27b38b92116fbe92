"""Input encodings: fixed positional encoding, the geometric resolution
schedule for multi-level feature grids, and the XOR spatial hash."""

import numpy as np

from . import kernels

# well-studied prime triple; multiplier 1 on the first axis keeps linear
# runs of cells contiguous in the table
HASH_PRIMES = (1, 2654435761, 805459861)


def resolution_schedule(r_min, r_max, levels):
    """Per-level grid resolutions spaced geometrically from r_min to r_max.

    R_l = floor(r_min * b**l) with b = exp((ln r_max - ln r_min)/(levels-1)),
    l = 0..levels-1, so the endpoints hit r_min and r_max exactly.
    """
    if levels < 2:
        raise ValueError("resolution schedule needs at least 2 levels")
    if r_min < 1 or r_max < r_min:
        raise ValueError("need 1 <= r_min <= r_max")
    b = np.exp((np.log(r_max) - np.log(r_min)) / (levels - 1))
    # hair of slack so exact powers are not floored down by fp error
    return [int(np.floor(r_min * b**level + 1e-9)) for level in range(levels)]


def spatial_hash(cells, table_size, primes=HASH_PRIMES):
    """Hash integer cell coords into [0, table_size).

    cells: (..., 3) integers; XOR of per-axis prime products, modulo the
    (power of two) table size. Exact in int64: coordinates up to 2048 times
    the largest prime stay well inside the representable range.
    """
    return kernels.hash_cells(
        np.asarray(cells, dtype=np.int64),
        np.asarray(primes, dtype=np.int64),
        int(table_size),
    )


class PositionalEncoding:
    """[x, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^(F-1) pi x), cos(...)].

    Identity part first, then per octave the per-axis sin block and cos
    block. Output dim = 3 + 3*2*octaves with identity included.
    """

    def __init__(self, octaves, include_identity=True):
        if octaves < 0:
            raise ValueError("octaves must be >= 0")
        self.octaves = int(octaves)
        self.include_identity = bool(include_identity)
        self.dim = (3 if include_identity else 0) + 3 * 2 * self.octaves
        self._freqs = np.pi * (2.0 ** np.arange(self.octaves))

    def encode(self, x):
        x = np.asarray(x, dtype=np.float64)
        parts = [x] if self.include_identity else []
        for f in self._freqs:
            parts.append(np.sin(f * x))
            parts.append(np.cos(f * x))
        if not parts:
            return np.zeros((x.shape[0], 0))
        return np.concatenate(parts, axis=-1)

    def encode_with_gradient(self, x):
        """Returns (enc (N, D), denc (N, 3, D)) with denc = d(enc)/dx."""
        x = np.asarray(x, dtype=np.float64)
        n = x.shape[0]
        enc = self.encode(x)
        denc = np.zeros((n, 3, self.dim))
        col = 0
        eye = np.eye(3)
        if self.include_identity:
            denc[:, :, 0:3] = eye[None, :, :]
            col = 3
        for f in self._freqs:
            s, c = np.sin(f * x), np.cos(f * x)
            for a in range(3):
                denc[:, a, col + a] = f * c[:, a]
                denc[:, a, col + 3 + a] = -f * s[:, a]
            col += 6
        return enc, denc
