"""Error-entropy training losses and the combined objective.

The core loss is the negative log of the normalized information
potential, -log(Z / N^2), i.e. the Parzen estimate of the quadratic
Renyi entropy of the error distribution. Two weighted forms reweight
the double sum by per-sample reliability weights, either asymmetrically
(chunk-weighted, omega_ij = w_i / N^2) or symmetrically
(element-weighted, omega_ij = w_i * w_j). The combined objective adds
the entropy term to plain MSE after a warmup phase.

Error convention: e = predicted - target throughout the package. The
losses are symmetric in the sign of e but gradients with respect to
predictions are not.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .exceptions import ConfigurationError
from .kernel import ErrorSet, _sq_dists_raw

__all__ = [
    "VARIANT_TMEE",
    "VARIANT_CW",
    "VARIANT_EW",
    "VARIANTS",
    "LossConfig",
    "WeightVector",
    "LossBreakdown",
    "mse_loss",
    "tmee_loss",
    "information_potential_value",
    "chunk_weights",
    "weighted_tmee_loss",
    "entropy_term",
    "warmup_steps",
    "total_loss",
]

VARIANT_TMEE = "tmee"
VARIANT_CW = "cw_tmee"
VARIANT_EW = "ew_tmee"
VARIANTS = (VARIANT_TMEE, VARIANT_CW, VARIANT_EW)

_CONFIG_KEYS = ("sigma", "sigma_w", "alpha", "variant", "warmup_fraction")


@dataclass(frozen=True)
class LossConfig:
    """Hyperparameters of the combined objective.

    Defaults follow the reference operating point: kernel bandwidth 0.5
    (documented valid range [0.5, 2.0]), weight bandwidth 0.5, loss
    weight 0.1 (menu {0.01, 0.1, 1.0}), warmup covering the first third
    of training.
    """

    sigma: float = 0.5
    sigma_w: float = 0.5
    alpha: float = 0.1
    variant: str = VARIANT_TMEE
    warmup_fraction: float = 1.0 / 3.0

    def __post_init__(self):
        if self.sigma <= 0:
            raise ConfigurationError(f"sigma must be > 0, got {self.sigma}")
        if self.sigma_w <= 0:
            raise ConfigurationError(f"sigma_w must be > 0, got {self.sigma_w}")
        if self.alpha < 0:
            raise ConfigurationError(f"alpha must be >= 0, got {self.alpha}")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ConfigurationError(
                f"warmup_fraction must be in [0, 1), got {self.warmup_fraction}"
            )
        if self.variant not in VARIANTS:
            raise ConfigurationError(
                f"variant must be one of {VARIANTS}, got {self.variant!r}"
            )

    def to_dict(self) -> dict:
        return {
            "sigma": self.sigma,
            "sigma_w": self.sigma_w,
            "alpha": self.alpha,
            "variant": self.variant,
            "warmup_fraction": self.warmup_fraction,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LossConfig":
        unknown = set(data) - set(_CONFIG_KEYS)
        if unknown:
            raise ConfigurationError(f"unknown loss config keys: {sorted(unknown)}")
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "LossConfig":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class WeightVector:
    """Nonnegative per-sample importance weights summing to 1."""

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        if w.ndim != 1 or w.size < 1:
            raise ConfigurationError(f"weights must be a 1-D vector, got shape {w.shape}")
        if np.any(w < 0.0):
            raise ConfigurationError("weights must be nonnegative")
        if abs(float(w.sum()) - 1.0) > 1e-12:
            raise ConfigurationError(f"weights must sum to 1, got {w.sum()!r}")
        object.__setattr__(self, "w", w)


@dataclass(frozen=True)
class LossBreakdown:
    """Per-term report for the combined objective."""

    mse: float
    entropy: float
    entropy_active: bool
    total: float


def mse_loss(errors: ErrorSet) -> float:
    """Mean squared error norm, (1/N) sum_i ||e_i||^2."""
    return float(np.mean(np.einsum("ij,ij->i", errors.samples, errors.samples)))


def tmee_loss(errors: ErrorSet, sigma: float) -> float:
    """Entropy loss -log(Z / N^2).

    Zero iff all samples coincide, positive otherwise. Because the
    diagonal contributes exactly N to Z, the argument of the log is at
    least 1/N and the loss never overflows for small bandwidths. Tiny
    negative values from summation rounding near total collapse are
    clamped at 0.
    """
    n = errors.n_samples
    z = information_potential_value(errors, sigma)
    return max(0.0, -math.log(z / (n * n)))


def _kernel_entries(errors: ErrorSet, sigma: float) -> np.ndarray:
    if sigma <= 0:
        raise ConfigurationError(f"sigma must be > 0, got {sigma}")
    d2 = _sq_dists_raw(errors.samples)
    d2 *= -1.0 / (2.0 * sigma * sigma)
    return np.exp(d2, out=d2)


def information_potential_value(errors: ErrorSet, sigma: float) -> float:
    """Z in the default deterministic summation order."""
    return float(np.sum(_kernel_entries(errors, sigma)))


def chunk_weights(errors: ErrorSet, sigma_w: float) -> WeightVector:
    """Reliability weights w_i = softmax(-||e_i||^2 / (2 sigma_w^2)).

    Smaller-magnitude errors get larger weight. Logits are max-shifted
    before exponentiation so the weights stay finite for arbitrarily
    large error magnitudes.
    """
    if sigma_w <= 0:
        raise ConfigurationError(f"sigma_w must be > 0, got {sigma_w}")
    sq_norms = np.einsum("ij,ij->i", errors.samples, errors.samples)
    logits = sq_norms / (-2.0 * sigma_w * sigma_w)
    logits -= logits.max()
    w = np.exp(logits)
    w /= w.sum()
    return WeightVector(w=w)


def _weighted_sum(errors: ErrorSet, config: LossConfig) -> Tuple[float, float, int]:
    """S = sum_ij omega_ij k_ij for the configured variant.

    Returns (S, total omega mass, N). The mass is 1 for the symmetric
    scheme and 1/N for the asymmetric one.
    """
    if config.variant == VARIANT_TMEE:
        raise ConfigurationError(
            "variant 'tmee' is unweighted; use tmee_loss for it"
        )
    n = errors.n_samples
    k = _kernel_entries(errors, config.sigma)
    w = chunk_weights(errors, config.sigma_w).w
    if config.variant == VARIANT_CW:
        s = float(w @ k.sum(axis=1)) / (n * n)
        mass = 1.0 / n
    else:
        s = float(w @ k @ w)
        mass = 1.0
    return s, mass, n


def weighted_tmee_loss(errors: ErrorSet, config: LossConfig) -> float:
    """Weighted entropy loss -log sum_ij omega_ij k_ij.

    For the element-weighted scheme the omega mass is 1, so the loss is
    >= 0; for the chunk-weighted scheme the mass is 1/N, so the loss is
    >= log N. Both bounds are attained iff all samples coincide.
    """
    s, mass, _ = _weighted_sum(errors, config)
    return max(-math.log(mass), -math.log(s))


def entropy_term(errors: ErrorSet, config: LossConfig) -> float:
    """Value of the configured entropy variant."""
    if config.variant == VARIANT_TMEE:
        return tmee_loss(errors, config.sigma)
    return weighted_tmee_loss(errors, config)


def warmup_steps(config: LossConfig, total_steps: int) -> int:
    """First step index at which the entropy term becomes active."""
    return math.ceil(config.warmup_fraction * total_steps)


def total_loss(
    errors: ErrorSet,
    config: LossConfig,
    step: int,
    total_steps: int,
) -> Tuple[float, LossBreakdown]:
    """Two-phase combined objective: MSE, then MSE + alpha * entropy.

    During warmup (step < ceil(warmup_fraction * total_steps)) the
    entropy term contributes nothing to the total and is reported as
    inactive; its value is still evaluated for diagnostics. The switch
    is hard (no annealing).
    """
    if total_steps < 1:
        raise ConfigurationError(f"total_steps must be >= 1, got {total_steps}")
    if not 0 <= step < total_steps:
        raise ConfigurationError(
            f"step must be in [0, {total_steps}), got {step}"
        )
    mse = mse_loss(errors)
    entropy = entropy_term(errors, config)
    active = step >= warmup_steps(config, total_steps)
    total = mse + config.alpha * entropy if active else mse
    return total, LossBreakdown(mse=mse, entropy=entropy, entropy_active=active, total=total)
