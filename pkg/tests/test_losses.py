import json
import math

import numpy as np
import pytest

from entroshape.exceptions import ConfigurationError
from entroshape.kernel import ErrorSet
from entroshape.losses import (
    LossConfig,
    VARIANT_CW,
    VARIANT_EW,
    chunk_weights,
    mse_loss,
    tmee_loss,
    total_loss,
    warmup_steps,
    weighted_tmee_loss,
)

TWO_POINT = ErrorSet(samples=np.array([[0.0], [1.0]]))

# Frozen from independent scalar evaluation of the double sums on the
# two-point instance at sigma = sigma_w = 0.5:
#   Z = 2 + 2 exp(-2),  loss = -log(Z/4)
#   w = (1, e^-2) / (1 + e^-2)
#   S_ew = w1^2 + w2^2 + 2 w1 w2 e^-2
TWO_POINT_TMEE = 0.5662191695169727
TWO_POINT_W = (0.8807970779778823, 0.11920292202211755)
TWO_POINT_EW = 0.2003655723800118


class TestMseLoss:
    def test_all_zero(self):
        assert mse_loss(ErrorSet(samples=np.zeros((4, 3)))) == 0.0

    def test_two_scalars(self):
        assert mse_loss(TWO_POINT) == 0.5

    def test_two_vectors(self):
        errors = ErrorSet(samples=np.array([[1.0, 1.0], [-1.0, -1.0]]))
        assert mse_loss(errors) == 2.0


class TestTmeeLoss:
    def test_collapsed_is_zero(self):
        errors = ErrorSet(samples=np.full((5, 2), 0.8))
        assert tmee_loss(errors, 1.0) == 0.0

    def test_two_point_frozen_value(self):
        assert tmee_loss(TWO_POINT, 0.5) == pytest.approx(TWO_POINT_TMEE, rel=1e-14)

    def test_single_sample_is_zero(self):
        assert tmee_loss(ErrorSet(samples=np.array([[3.0]])), 0.5) == 0.0

    def test_positive_for_any_spread(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            samples = rng.normal(size=(int(rng.integers(2, 12)), 2))
            if np.allclose(samples, samples[0]):
                continue
            assert tmee_loss(ErrorSet(samples=samples), 1.0) > 0.0

    def test_bandwidth_monotonicity_on_two_points(self):
        # loss -> 0 as sigma grows, increases as sigma -> 0+
        sigmas = [0.1, 0.25, 0.5, 1.0, 2.0, 8.0]
        values = [tmee_loss(TWO_POINT, s) for s in sigmas]
        assert all(a > b for a, b in zip(values, values[1:]))
        assert values[-1] < 1e-2

    def test_nonpositive_sigma_rejected(self):
        with pytest.raises(ConfigurationError):
            tmee_loss(TWO_POINT, 0.0)


class TestChunkWeights:
    def test_equal_magnitudes_uniform(self):
        errors = ErrorSet(samples=np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]]))
        np.testing.assert_allclose(chunk_weights(errors, 0.5).w, 1.0 / 3.0)

    def test_two_point_frozen_value(self):
        w = chunk_weights(TWO_POINT, 0.5).w
        assert w[0] == pytest.approx(TWO_POINT_W[0], rel=1e-14)
        assert w[1] == pytest.approx(TWO_POINT_W[1], rel=1e-14)

    def test_single_sample(self):
        w = chunk_weights(ErrorSet(samples=np.array([[9.0]])), 0.5).w
        np.testing.assert_array_equal(w, [1.0])

    def test_huge_magnitudes_stay_finite(self):
        errors = ErrorSet(samples=np.array([[1e6], [1e6 + 1.0], [2e6]]))
        w = chunk_weights(errors, 0.5).w
        assert np.all(np.isfinite(w))
        assert w.sum() == pytest.approx(1.0, abs=1e-12)

    def test_monotone_in_magnitude(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            errors = ErrorSet(samples=rng.normal(size=(10, 3)))
            w = chunk_weights(errors, 0.5).w
            norms = np.linalg.norm(errors.samples, axis=1)
            order = np.argsort(norms)
            assert np.all(np.diff(w[order]) <= 1e-15)


class TestWeightedTmeeLoss:
    def test_collapsed_ew_is_zero(self):
        errors = ErrorSet(samples=np.full((6, 2), 1.5))
        cfg = LossConfig(variant=VARIANT_EW)
        # weight normalization leaves ~1 ulp of dust in S at collapse
        assert weighted_tmee_loss(errors, cfg) == pytest.approx(0.0, abs=1e-13)

    def test_collapsed_cw_is_log_n(self):
        errors = ErrorSet(samples=np.full((6, 2), 1.5))
        cfg = LossConfig(variant=VARIANT_CW)
        assert weighted_tmee_loss(errors, cfg) == pytest.approx(math.log(6), rel=1e-14)

    def test_two_point_ew_frozen_value(self):
        cfg = LossConfig(sigma=0.5, sigma_w=0.5, variant=VARIANT_EW)
        assert weighted_tmee_loss(TWO_POINT, cfg) == pytest.approx(
            TWO_POINT_EW, rel=1e-13
        )

    def test_bounds_on_random_instances(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            n = int(rng.integers(2, 20))
            errors = ErrorSet(samples=rng.normal(size=(n, int(rng.integers(1, 5)))))
            ew = weighted_tmee_loss(errors, LossConfig(variant=VARIANT_EW))
            cw = weighted_tmee_loss(errors, LossConfig(variant=VARIANT_CW))
            assert ew >= 0.0
            assert cw >= math.log(n)

    def test_tmee_variant_routed_here_rejected(self):
        with pytest.raises(ConfigurationError):
            weighted_tmee_loss(TWO_POINT, LossConfig(variant="tmee"))


class TestTotalLoss:
    def test_warmup_reports_inactive_entropy(self):
        cfg = LossConfig(alpha=0.1, warmup_fraction=1.0 / 3.0)
        total, breakdown = total_loss(TWO_POINT, cfg, step=0, total_steps=30000)
        assert not breakdown.entropy_active
        assert total == breakdown.mse == 0.5
        assert breakdown.entropy == pytest.approx(TWO_POINT_TMEE, rel=1e-12)

    def test_activation_boundary(self):
        cfg = LossConfig(alpha=0.1, warmup_fraction=1.0 / 3.0)
        boundary = warmup_steps(cfg, 30000)
        assert boundary == 10000
        _, before = total_loss(TWO_POINT, cfg, step=boundary - 1, total_steps=30000)
        _, after = total_loss(TWO_POINT, cfg, step=boundary, total_steps=30000)
        assert not before.entropy_active
        assert after.entropy_active

    def test_alpha_zero_equals_mse_everywhere(self):
        cfg = LossConfig(alpha=0.0)
        for step in (0, 500, 999):
            total, breakdown = total_loss(TWO_POINT, cfg, step=step, total_steps=1000)
            assert total == breakdown.mse

    def test_all_zero_errors_post_warmup(self):
        errors = ErrorSet(samples=np.zeros((4, 2)))
        total, breakdown = total_loss(errors, LossConfig(alpha=1.0), 900, 1000)
        assert breakdown.entropy_active
        assert total == 0.0

    def test_post_warmup_sum(self):
        cfg = LossConfig(alpha=0.7)
        total, breakdown = total_loss(TWO_POINT, cfg, step=900, total_steps=1000)
        assert total == pytest.approx(breakdown.mse + 0.7 * breakdown.entropy, rel=1e-14)

    def test_step_out_of_range_rejected(self):
        with pytest.raises(ConfigurationError):
            total_loss(TWO_POINT, LossConfig(), step=10, total_steps=10)


class TestLossConfig:
    def test_json_round_trip(self):
        cfg = LossConfig(sigma=1.5, sigma_w=0.5, alpha=0.01, variant="ew_tmee", warmup_fraction=0.25)
        loaded = LossConfig.from_json(cfg.to_json())
        assert loaded == cfg

    def test_json_keys(self):
        keys = set(json.loads(LossConfig().to_json()))
        assert keys == {"sigma", "sigma_w", "alpha", "variant", "warmup_fraction"}

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigurationError):
            LossConfig.from_dict({"sigma": 0.5, "bogus": 1})

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"sigma": 0.0},
            {"sigma_w": -1.0},
            {"alpha": -0.1},
            {"warmup_fraction": 1.0},
            {"variant": "nope"},
        ],
    )
    def test_invalid_values_rejected(self, kwargs):
        with pytest.raises(ConfigurationError):
            LossConfig(**kwargs)


class TestInvarianceProperties:
    def test_translation_invariance(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            n = int(rng.integers(2, 20))
            d = int(rng.integers(1, 6))
            samples = rng.normal(size=(n, d))
            shift = rng.uniform(-2.0, 2.0, size=d)
            base = tmee_loss(ErrorSet(samples=samples), 0.5)
            shifted = tmee_loss(ErrorSet(samples=samples + shift), 0.5)
            assert abs(base - shifted) < 1e-12

    def test_permutation_invariance(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            n = int(rng.integers(2, 20))
            samples = rng.normal(size=(n, 3))
            base = tmee_loss(ErrorSet(samples=samples), 1.0)
            perm = tmee_loss(ErrorSet(samples=samples[rng.permutation(n)]), 1.0)
            assert abs(base - perm) < 1e-12
