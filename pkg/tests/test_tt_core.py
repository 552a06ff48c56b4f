import numpy as np
import pytest

from src.lowrank.tt_core import (
    TensorTrain3,
    storage_ratio,
    truncation_rank,
    tt_from_full,
    tt_load,
    tt_rank1,
    tt_random,
    tt_save,
    tt_zeros,
)
from src.utils.errors import DimensionMismatchError, SizeCapError


def test_from_full_exact_reconstruction(rng):
    t = rng.standard_normal((6, 5, 4))
    z = tt_from_full(t, 0.0)
    assert np.allclose(z.full(), t, atol=1e-12)
    # Exact ranks are bounded by the unfolding sizes
    assert z.ranks[0] <= 6 and z.ranks[1] <= 4


def test_from_full_respects_tolerance(rng):
    t = rng.standard_normal((6, 5, 4))
    z = tt_from_full(t, 0.1)
    assert np.linalg.norm(z.full() - t) <= 0.1 * np.linalg.norm(t)
    exact = tt_from_full(t, 0.0)
    assert z.ranks[0] <= exact.ranks[0] and z.ranks[1] <= exact.ranks[1]


def test_from_full_truncates_decaying_spectrum():
    i, j, k = np.meshgrid(np.arange(6), np.arange(5), np.arange(4), indexing="ij")
    t = 1.0 / (1.0 + i + j + k)
    exact = tt_from_full(t, 0.0)
    z = tt_from_full(t, 0.1)
    assert np.linalg.norm(z.full() - t) <= 0.1 * np.linalg.norm(t)
    assert z.ranks[0] < exact.ranks[0]
    assert z.ranks[1] < exact.ranks[1]


def test_from_full_of_outer_product_has_unit_ranks(rng):
    for _ in range(20):
        a, b, c = rng.standard_normal(6), rng.standard_normal(5), rng.standard_normal(7)
        t = np.einsum("i,j,k->ijk", a, b, c)
        z = tt_from_full(t, 0.0)
        assert z.ranks == (1, 1)
        assert np.abs(z.full() - t).max() <= 1e-12 * max(1.0, np.abs(t).max())


def test_from_full_drops_noise_ranks(rng):
    low = tt_random((8, 7, 6), (2, 2), rng).full()
    noisy = low + 1e-6 * np.linalg.norm(low) * rng.standard_normal(low.shape) / np.sqrt(low.size)
    z = tt_from_full(noisy, 1e-3)
    assert z.ranks == (2, 2)
    assert np.linalg.norm(z.full() - noisy) <= 1e-3 * np.linalg.norm(noisy)


def test_zero_tensor_has_unit_ranks():
    z = tt_from_full(np.zeros((3, 4, 5)), 1e-8)
    assert z.ranks == (1, 1)
    assert z.norm() == 0.0
    assert tt_zeros((3, 4, 5)).round(0.1).ranks == (1, 1)


def test_rounding_error_bound_on_random_trains():
    rng = np.random.default_rng(7)
    for _ in range(200):
        shape = tuple(int(n) for n in rng.integers(1, 17, size=3))
        ranks = tuple(int(k) for k in rng.integers(1, 9, size=2))
        z = tt_random(shape, ranks, rng)
        dense = z.full()
        for eps in (1e-1, 1e-3, 1e-6):
            rounded = z.round(eps)
            error = np.linalg.norm(rounded.full() - dense)
            assert error <= eps * np.linalg.norm(dense) * (1 + 1e-10) + 1e-13


def test_rounding_recovers_ranks_of_a_doubled_sum(rng):
    a = tt_random((6, 5, 7), (3, 2), rng)
    doubled = a + a
    assert doubled.ranks == (6, 4)
    rounded = doubled.round(1e-10)
    assert rounded.ranks == (3, 2)
    assert np.allclose(rounded.full(), 2 * a.full(), atol=1e-9 * np.linalg.norm(a.full()))


def test_lossless_rounding_merges_repeated_terms(rng):
    x1, x2, x3 = rng.standard_normal(6), rng.standard_normal(5), rng.standard_normal(7)
    z = tt_rank1(x1, x2, x3)
    rounded = (z + z).round(0.0)
    assert rounded.ranks == (1, 1)
    assert np.allclose(rounded.full(), 2 * z.full(), atol=1e-12 * np.linalg.norm(z.full()))


def test_arithmetic_matches_dense(rng):
    a = tt_random((4, 3, 5), (2, 3), rng)
    b = tt_random((4, 3, 5), (3, 1), rng)
    A, B = a.full(), b.full()
    assert np.allclose((a + b).full(), A + B)
    assert np.allclose((a - b).full(), A - B)
    assert np.allclose((-a).full(), -A)
    assert np.allclose((2.5 * a).full(), 2.5 * A)
    assert a.dot(b) == pytest.approx(np.sum(A * B))
    assert a.norm() == pytest.approx(np.linalg.norm(A))


def test_norm_of_cancelling_difference(rng):
    a = tt_random((5, 4, 6), (2, 2), rng)
    assert (a - a).norm() <= 1e-12 * a.norm()


def test_slices_match_dense(rng):
    z = tt_random((4, 3, 5), (2, 3), rng)
    dense = z.full()
    assert np.allclose(z.time_slice(2), dense[2])
    assert np.allclose(z.stochastic_slice(1), dense[:, 1, :])


def test_rank1_vectorization_order():
    x1, x2, x3 = np.array([1.0, 2.0]), np.array([3.0, -1.0, 0.5]), np.array([1.0, 4.0])
    z = tt_rank1(x1, x2, x3)
    assert np.allclose(z.full().ravel(), np.kron(x1, np.kron(x2, x3)))


def test_truncation_rank_keeps_ties():
    s = np.array([3.0, 2.0, 2.0, 0.1])
    assert truncation_rank(s, 0.5) == 3
    assert truncation_rank(s, 2.1) == 3
    assert truncation_rank(s, 0.0) == 4
    assert truncation_rank(np.array([1.0, 1e-17, 1e-18]), 0.0) == 1


def test_full_refuses_large_tensors(rng):
    z = tt_random((10, 10, 10), (1, 1), rng)
    with pytest.raises(SizeCapError):
        z.full(cap=999)
    with pytest.raises(SizeCapError):
        tt_from_full(np.ones((10, 10, 10)), 0.1, cap=999)


def test_inconsistent_cores_raise():
    with pytest.raises(DimensionMismatchError):
        TensorTrain3(np.ones((3, 2)), np.ones((3, 4, 1)), np.ones((1, 5)))
    with pytest.raises(DimensionMismatchError):
        tt_zeros((2, 2, 2)) + tt_zeros((2, 2, 3))


def test_storage_ratio_of_reported_ranks():
    ratio = storage_ratio((64, 20, 2992), (13, 83))
    assert ratio == pytest.approx(270748 / 3829760)
    assert ratio == pytest.approx(0.0707, abs=5e-4)


def test_save_and_load(tmp_path, rng):
    z = tt_random((4, 3, 5), (2, 3), rng)
    path = tmp_path / "z.tt3"
    tt_save(z, path)
    loaded = tt_load(path)
    assert loaded.ranks == z.ranks
    assert np.array_equal(loaded.core2, z.core2)


def test_load_rejects_corrupt_files(tmp_path, rng):
    bad = tmp_path / "bad.tt3"
    bad.write_bytes(b"XXXX" + bytes(40))
    with pytest.raises(ValueError):
        tt_load(bad)

    path = tmp_path / "z.tt3"
    tt_save(tt_random((2, 2, 2), (1, 1), rng), path)
    path.write_bytes(path.read_bytes() + b"\0" * 8)
    with pytest.raises(ValueError):
        tt_load(path)
