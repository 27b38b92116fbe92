import numpy as np
import pytest

from sdfrecon.encoding import (
    HASH_PRIMES,
    PositionalEncoding,
    resolution_schedule,
    spatial_hash,
)

# floor(16 * (2048/16)**(l/15)) for l = 0..15
PAPER_DEFAULT_SCHEDULE = [
    16, 22, 30, 42, 58, 80, 111, 153, 212, 294, 406, 561, 776, 1072, 1482, 2048,
]


def test_schedule_paper_defaults():
    assert resolution_schedule(16, 2048, 16) == PAPER_DEFAULT_SCHEDULE


def test_schedule_endpoints_exact():
    rs = resolution_schedule(16, 2048, 16)
    assert rs[0] == 16 and rs[-1] == 2048
    assert rs[1] == 22


def test_schedule_flat_and_power_of_two():
    assert resolution_schedule(16, 16, 2) == [16, 16]
    assert resolution_schedule(2, 8, 3) == [2, 4, 8]


def test_schedule_rejects_bad_args():
    with pytest.raises(ValueError):
        resolution_schedule(16, 2048, 1)
    with pytest.raises(ValueError):
        resolution_schedule(0, 8, 3)
    with pytest.raises(ValueError):
        resolution_schedule(16, 8, 3)


def test_schedule_monotone_for_random_args():
    rng = np.random.default_rng(0)
    for _ in range(50):
        r_min = int(rng.integers(1, 64))
        r_max = int(rng.integers(r_min, 4096))
        levels = int(rng.integers(2, 24))
        rs = resolution_schedule(r_min, r_max, levels)
        assert rs[0] == r_min and rs[-1] == r_max
        assert all(a <= b for a, b in zip(rs, rs[1:]))


def test_hash_zero_cell():
    assert spatial_hash(np.array([[0, 0, 0]]), 2**19)[0] == 0


def test_hash_single_axis_identity_prime():
    # pi_1 = 1, so (1,0,0) hashes to 1 mod T
    assert spatial_hash(np.array([[1, 0, 0]]), 2**19)[0] == 1


def test_hash_reference_value():
    # exact integer arithmetic: (1*1 ^ 2*2654435761 ^ 3*805459861) mod 2**19
    expected = (1 * HASH_PRIMES[0] ^ 2 * HASH_PRIMES[1] ^ 3 * HASH_PRIMES[2]) % 2**19
    assert expected == 128476
    assert spatial_hash(np.array([[1, 2, 3]]), 2**19)[0] == 128476


def test_hash_range_and_determinism():
    rng = np.random.default_rng(1)
    cells = rng.integers(0, 4096, size=(5000, 3))
    h1 = spatial_hash(cells, 2**19)
    h2 = spatial_hash(cells, 2**19)
    assert np.array_equal(h1, h2)
    assert h1.min() >= 0 and h1.max() < 2**19


def test_positional_encoding_at_origin():
    pe = PositionalEncoding(octaves=3)
    out = pe.encode(np.zeros((1, 3)))
    assert out.shape == (1, pe.dim)
    np.testing.assert_allclose(out[0, :3], 0.0)
    sin_cols = [3 + 6 * f + a for f in range(3) for a in range(3)]
    cos_cols = [3 + 6 * f + 3 + a for f in range(3) for a in range(3)]
    np.testing.assert_allclose(out[0, sin_cols], 0.0)
    np.testing.assert_allclose(out[0, cos_cols], 1.0)


def test_positional_encoding_zero_octaves_is_identity():
    pe = PositionalEncoding(octaves=0)
    x = np.array([[0.3, -0.7, 0.1]])
    np.testing.assert_array_equal(pe.encode(x), x)


def test_positional_encoding_unit_x():
    pe = PositionalEncoding(octaves=1)
    out = pe.encode(np.array([[1.0, 0.0, 0.0]]))
    assert out[0, 3] == pytest.approx(0.0, abs=1e-12)  # sin(pi)
    assert out[0, 6] == pytest.approx(-1.0)  # cos(pi)


@pytest.mark.parametrize("octaves", [0, 1, 4, 6])
def test_positional_encoding_dim(octaves):
    pe = PositionalEncoding(octaves)
    assert pe.dim == 3 + 3 * 2 * octaves
    assert pe.encode(np.zeros((5, 3))).shape == (5, pe.dim)


def test_positional_encoding_gradient_matches_fd():
    pe = PositionalEncoding(octaves=4)
    rng = np.random.default_rng(2)
    x = rng.uniform(-1, 1, size=(20, 3))
    enc, denc = pe.encode_with_gradient(x)
    np.testing.assert_array_equal(enc, pe.encode(x))
    h = 1e-6
    for a in range(3):
        xp, xm = x.copy(), x.copy()
        xp[:, a] += h
        xm[:, a] -= h
        fd = (pe.encode(xp) - pe.encode(xm)) / (2 * h)
        np.testing.assert_allclose(denc[:, a, :], fd, atol=1e-6)
