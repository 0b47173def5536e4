import math

import numpy as np
import pytest

from entroshape.exceptions import ConfigurationError, InputError
from entroshape.kernel import (
    ErrorSet,
    flatten_batch,
    information_potential,
    load_error_csv,
    pairwise_kernel,
    pairwise_sq_dists,
    save_error_csv,
)

TWO_POINT = ErrorSet(samples=np.array([[0.0], [1.0]]))


class TestPairwiseKernel:
    def test_identical_samples_give_unit_kernel(self):
        errors = ErrorSet(samples=np.array([[0.3, -0.7], [0.3, -0.7]]))
        k = pairwise_kernel(errors, 1.7)
        assert k.entries[0, 1] == 1.0

    def test_two_point_hand_value(self):
        # exp(-||0-1||^2 / (2 * 0.25)) = exp(-2)
        k = pairwise_kernel(TWO_POINT, 0.5)
        assert k.entries[0, 1] == pytest.approx(math.exp(-2.0), rel=1e-15)

    def test_single_sample(self):
        k = pairwise_kernel(ErrorSet(samples=np.array([[2.0, 3.0]])), 1.0)
        assert k.entries.shape == (1, 1)
        assert k.entries[0, 0] == 1.0

    def test_unit_diagonal_and_range(self):
        rng = np.random.default_rng(0)
        errors = ErrorSet(samples=rng.normal(size=(40, 5)))
        k = pairwise_kernel(errors, 0.8).entries
        assert np.all(np.diag(k) == 1.0)
        assert np.all(k > 0.0)
        assert np.all(k <= 1.0)

    def test_exact_symmetry(self):
        rng = np.random.default_rng(1)
        errors = ErrorSet(samples=rng.normal(size=(64, 7)) * 100)
        k = pairwise_kernel(errors, 0.5).entries
        assert np.array_equal(k, k.T)

    def test_scale_response_never_increases_offdiagonal(self):
        rng = np.random.default_rng(2)
        samples = rng.normal(size=(20, 3))
        k1 = pairwise_kernel(ErrorSet(samples=samples), 1.0).entries
        k2 = pairwise_kernel(ErrorSet(samples=samples * 3.5), 1.0).entries
        off = ~np.eye(20, dtype=bool)
        assert np.all(k2[off] <= k1[off])

    def test_nonpositive_sigma_rejected(self):
        with pytest.raises(ConfigurationError):
            pairwise_kernel(TWO_POINT, 0.0)
        with pytest.raises(ConfigurationError):
            pairwise_kernel(TWO_POINT, -1.0)


class TestInformationPotential:
    def test_collapsed_set_attains_n_squared(self):
        errors = ErrorSet(samples=np.ones((3, 2)))
        assert information_potential(errors, 0.7) == 9.0

    def test_two_point_hand_value(self):
        z = information_potential(TWO_POINT, 0.5)
        assert z == pytest.approx(2.0 + 2.0 * math.exp(-2.0), rel=1e-15)

    def test_single_sample(self):
        assert information_potential(ErrorSet(samples=np.array([[5.0]])), 1.0) == 1.0

    def test_bounds(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            n = int(rng.integers(1, 30))
            errors = ErrorSet(samples=rng.normal(size=(n, 4)))
            z = information_potential(errors, float(rng.uniform(0.3, 2.0)))
            assert n <= z <= n * n + 1e-9

    def test_blocked_matches_sequential(self):
        rng = np.random.default_rng(4)
        errors = ErrorSet(samples=rng.normal(size=(800, 6)))
        z_seq = information_potential(errors, 0.9)
        for block in (1, 7, 64, 1024):
            z_blk = information_potential(errors, 0.9, block_size=block)
            assert abs(z_blk - z_seq) / z_seq < 1e-12

    def test_threaded_blocked_matches_sequential(self):
        rng = np.random.default_rng(5)
        errors = ErrorSet(samples=rng.normal(size=(600, 3)))
        z_seq = information_potential(errors, 0.5)
        z_par = information_potential(errors, 0.5, block_size=37, threads=4)
        assert abs(z_par - z_seq) / z_seq < 1e-12


class TestFlattenBatch:
    def test_identity_flatten(self):
        out = flatten_batch(np.full((1, 1, 1, 3), 2.5))
        assert out.n_samples == 1
        assert out.samples.shape == (1, 3)
        np.testing.assert_array_equal(out.provenance, [[0, 0, 0]])

    def test_declared_row_major_order(self):
        arr = np.zeros((2, 1, 2, 1))
        arr[0, 0, 0, 0] = 1
        arr[0, 0, 1, 0] = 2
        arr[1, 0, 0, 0] = 3
        arr[1, 0, 1, 0] = 4
        out = flatten_batch(arr)
        np.testing.assert_array_equal(out.samples.ravel(), [1, 2, 3, 4])
        np.testing.assert_array_equal(
            out.provenance, [[0, 0, 0], [0, 0, 1], [1, 0, 0], [1, 0, 1]]
        )

    def test_product_count(self):
        out = flatten_batch(np.zeros((2, 3, 8, 4)))
        assert out.n_samples == 48
        assert len(np.unique(out.provenance, axis=0)) == 48

    def test_ragged_rejected(self):
        with pytest.raises(InputError):
            flatten_batch([[[[0.0], [1.0]]], [[[0.0]]]])

    def test_wrong_rank_rejected(self):
        with pytest.raises(InputError):
            flatten_batch(np.zeros((2, 3, 4)))


class TestErrorSetValidation:
    def test_dimension_mismatch_rejected(self):
        with pytest.raises(InputError):
            ErrorSet(samples=np.array([[1.0, 2.0], [3.0]], dtype=object))

    def test_empty_rejected(self):
        with pytest.raises(InputError):
            ErrorSet(samples=np.zeros((0, 3)))

    def test_non_finite_rejected(self):
        with pytest.raises(InputError):
            ErrorSet(samples=np.array([[np.nan], [1.0]]))

    def test_duplicate_provenance_rejected(self):
        with pytest.raises(InputError):
            ErrorSet(
                samples=np.zeros((2, 1)),
                provenance=np.array([[0, 0, 0], [0, 0, 0]]),
            )

    def test_one_dimensional_input_promoted(self):
        errors = ErrorSet(samples=np.array([1.0, 2.0, 3.0]))
        assert errors.samples.shape == (3, 1)


class TestCsvRoundTrip:
    def test_exact_round_trip(self, tmp_path):
        rng = np.random.default_rng(6)
        original = flatten_batch(rng.normal(size=(2, 3, 2, 4)))
        path = tmp_path / "errors.csv"
        save_error_csv(original, path)
        loaded = load_error_csv(path)
        assert np.array_equal(loaded.samples, original.samples)
        assert np.array_equal(loaded.provenance, original.provenance)

    def test_header_written(self, tmp_path):
        path = tmp_path / "errors.csv"
        save_error_csv(TWO_POINT, path)
        assert path.read_text().splitlines()[0] == "b,t,k,e_0"

    def test_missing_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("1,2,3,4\n")
        with pytest.raises(InputError):
            load_error_csv(path)


def test_sq_dists_match_direct_computation():
    rng = np.random.default_rng(7)
    samples = rng.normal(size=(25, 6))
    direct = ((samples[:, None, :] - samples[None, :, :]) ** 2).sum(axis=2)
    np.testing.assert_allclose(pairwise_sq_dists(samples), direct, atol=1e-12)
