import math

import numpy as np
import pytest

from entroshape.exceptions import ConfigurationError, InputError
from entroshape.noise import (
    KIND_CAUCHY,
    KIND_IMPULSE,
    KIND_NONE,
    NoiseSpec,
    corrupt_actions,
)


class TestNoiseSpec:
    def test_reference_defaults(self):
        spec = NoiseSpec()
        assert spec.gamma == 0.02
        assert spec.p == 0.05

    def test_dict_round_trip(self):
        spec = NoiseSpec(kind=KIND_CAUCHY, gamma=0.1, truncation_bound=0.5, seed=7)
        assert NoiseSpec.from_dict(spec.to_dict()) == spec

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigurationError):
            NoiseSpec.from_dict({"kind": "none", "what": 1})

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"kind": "bogus"},
            {"kind": KIND_CAUCHY, "gamma": 0.0},
            {"kind": KIND_IMPULSE, "p": 1.5},
            {"truncation_bound": 0.0},
        ],
    )
    def test_invalid_values_rejected(self, kwargs):
        with pytest.raises(ConfigurationError):
            NoiseSpec(**kwargs)


class TestCorruptActions:
    def test_none_is_identity(self):
        actions = np.random.default_rng(0).normal(size=(4, 3, 2))
        out = corrupt_actions(actions, NoiseSpec(kind=KIND_NONE))
        np.testing.assert_array_equal(out, actions)

    def test_zero_probability_impulse_is_identity(self):
        actions = np.random.default_rng(1).normal(size=(4, 3, 2))
        out = corrupt_actions(actions, NoiseSpec(kind=KIND_IMPULSE, p=0.0))
        np.testing.assert_array_equal(out, actions)

    def test_same_seed_identical(self):
        actions = np.zeros((5, 4, 3))
        spec = NoiseSpec(kind=KIND_CAUCHY, gamma=0.02, seed=42)
        out1 = corrupt_actions(actions, spec)
        out2 = corrupt_actions(actions, spec)
        np.testing.assert_array_equal(out1, out2)

    def test_different_seed_differs(self):
        actions = np.zeros((5, 4, 3))
        out1 = corrupt_actions(actions, NoiseSpec(kind=KIND_CAUCHY, seed=1))
        out2 = corrupt_actions(actions, NoiseSpec(kind=KIND_CAUCHY, seed=2))
        assert not np.array_equal(out1, out2)

    def test_shape_preserved(self):
        actions = np.zeros((7, 2, 5))
        out = corrupt_actions(actions, NoiseSpec(kind=KIND_IMPULSE, seed=0))
        assert out.shape == actions.shape

    def test_non_finite_rejected(self):
        actions = np.array([[np.inf, 0.0]])
        with pytest.raises(InputError):
            corrupt_actions(actions, NoiseSpec(kind=KIND_CAUCHY))

    def test_cauchy_truncation_bound_respected(self):
        actions = np.zeros(10**5)
        spec = NoiseSpec(kind=KIND_CAUCHY, gamma=0.02, truncation_bound=0.7, seed=3)
        deviations = corrupt_actions(actions, spec)
        assert np.abs(deviations).max() <= 0.7

    def test_cauchy_median_near_zero(self):
        # median is the robust location statistic for Cauchy noise
        actions = np.zeros(10**6)
        spec = NoiseSpec(kind=KIND_CAUCHY, gamma=0.02, truncation_bound=1.0, seed=4)
        deviations = corrupt_actions(actions, spec)
        assert abs(np.median(deviations)) < 1e-3

    def test_impulse_fraction_within_binomial_band(self):
        p = 0.05
        n = 10**6
        actions = np.zeros(n)
        spec = NoiseSpec(kind=KIND_IMPULSE, p=p, impulse_std=1.0, seed=5)
        corrupted = corrupt_actions(actions, spec)
        fraction = np.count_nonzero(corrupted) / n
        band = 3.0 * math.sqrt(p * (1 - p) / n)
        assert abs(fraction - p) <= band

    def test_impulse_deviations_zero_mean_large_scale(self):
        actions = np.zeros(10**6)
        spec = NoiseSpec(kind=KIND_IMPULSE, p=0.05, impulse_std=1.0, seed=6)
        corrupted = corrupt_actions(actions, spec)
        hits = corrupted[corrupted != 0.0]
        assert abs(hits.mean()) < 0.02
        assert 0.9 < hits.std() < 1.1
