"""Executable checks of the theory and the diagnostic projections.

Covers the entropy estimate itself, the large-bandwidth expansion of
the information potential (whose leading non-constant term recovers the
MSE structure), the exact within/cross-group decomposition behind the
task-coupling ratio, and the PCA projection used to visualize error
clouds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import ConfigurationError, InputError
from .kernel import ErrorSet, pairwise_kernel, pairwise_sq_dists
from .losses import tmee_loss

__all__ = [
    "TaskPartition",
    "CouplingReport",
    "renyi_entropy_estimate",
    "taylor_potential",
    "mse_identity_check",
    "coupling_ratio",
    "pca_project",
    "entropy_curve",
]

TAYLOR_MAX_ORDER = 6


def renyi_entropy_estimate(errors: ErrorSet, sigma: float) -> float:
    """Parzen estimate of the quadratic Renyi entropy, -log(Z / N^2).

    Numerically identical to the entropy loss; exposed under its
    estimator name for analysis code.
    """
    return tmee_loss(errors, sigma)


def taylor_potential(
    errors: ErrorSet, sigma: float, order: int
) -> Tuple[float, List[float]]:
    """Truncated large-bandwidth expansion of the information potential.

    Term 0 is N^2 and term k is
    ((-1)^k / (k! 2^k sigma^{2k})) * sum_{t,s} ||e_t - e_s||^{2k},
    so the truncation error of order n is O(sigma^{-2(n+1)}) on fixed
    data. Returns (approximate Z, per-order terms 0..order).
    """
    if sigma <= 0:
        raise ConfigurationError(f"sigma must be > 0, got {sigma}")
    if not 1 <= order <= TAYLOR_MAX_ORDER:
        raise ConfigurationError(
            f"order must be in [1, {TAYLOR_MAX_ORDER}], got {order}"
        )
    n = errors.n_samples
    d2 = pairwise_sq_dists(errors.samples)
    terms = [float(n * n)]
    power = np.ones_like(d2)
    for k in range(1, order + 1):
        power = power * d2
        coeff = (-1.0) ** k / (math.factorial(k) * (2.0**k) * sigma ** (2 * k))
        terms.append(coeff * float(power.sum()))
    return sum(terms), terms


def mse_identity_check(errors: ErrorSet) -> Tuple[float, float, float]:
    """Verify sum_{t,s} ||e_t - e_s||^2 = 2 N sum_t ||e_t - e_bar||^2.

    This is the identity by which the leading expansion term reduces to
    centered MSE. Returns (lhs, rhs, relative residual); the residual is
    0 when both sides vanish.
    """
    e = errors.samples
    n = errors.n_samples
    lhs = float(pairwise_sq_dists(e).sum())
    centered = e - e.mean(axis=0, keepdims=True)
    rhs = 2.0 * n * float(np.einsum("ij,ij->", centered, centered))
    denom = max(abs(lhs), abs(rhs))
    residual = 0.0 if denom == 0.0 else abs(lhs - rhs) / denom
    return lhs, rhs, residual


@dataclass(frozen=True)
class TaskPartition:
    """Assignment of each error sample to task group "A" or "B"."""

    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 1:
            raise InputError(f"labels must be 1-D, got shape {labels.shape}")
        values = set(np.unique(labels).tolist())
        if not values <= {"A", "B"}:
            raise InputError(f"labels must be 'A' or 'B', got {sorted(values)}")
        if "A" not in values or "B" not in values:
            raise InputError("both groups must be nonempty")
        object.__setattr__(self, "labels", labels)

    @property
    def n_a(self) -> int:
        return int(np.sum(self.labels == "A"))

    @property
    def n_b(self) -> int:
        return int(np.sum(self.labels == "B"))


@dataclass(frozen=True)
class CouplingReport:
    """Mean kernel similarities, coupling ratio, and the decomposition check.

    r_b = 2 (N_A / N_B) (k_bar_AB / k_bar_BB) measures the relative
    strength of majority-group interactions acting on group B in error
    space; values far above 1 indicate the minority group's dynamics are
    dominated by the majority, values far below 1 indicate decoupling.
    """

    k_bar_aa: float
    k_bar_ab: float
    k_bar_bb: float
    r_b: float
    decomposition_residual: float
    n_a: int
    n_b: int


def coupling_ratio(
    errors: ErrorSet, partition: TaskPartition, sigma: float
) -> CouplingReport:
    """Group-mean kernel similarities and the cross-group coupling ratio.

    Also verifies the exact decomposition
    sum_ij k_ij = N_A^2 k_bar_AA + 2 N_A N_B k_bar_AB + N_B^2 k_bar_BB
    and reports its relative residual.
    """
    if partition.labels.shape[0] != errors.n_samples:
        raise InputError(
            f"partition labels ({partition.labels.shape[0]}) do not match samples ({errors.n_samples})"
        )
    k = pairwise_kernel(errors, sigma).entries
    mask_a = partition.labels == "A"
    mask_b = ~mask_a
    n_a = int(mask_a.sum())
    n_b = int(mask_b.sum())
    k_aa = float(k[np.ix_(mask_a, mask_a)].sum())
    k_bb = float(k[np.ix_(mask_b, mask_b)].sum())
    k_ab = float(k[np.ix_(mask_a, mask_b)].sum())
    k_bar_aa = k_aa / (n_a * n_a)
    k_bar_bb = k_bb / (n_b * n_b)
    k_bar_ab = k_ab / (n_a * n_b)
    total = float(k.sum())
    reconstructed = n_a * n_a * k_bar_aa + 2.0 * n_a * n_b * k_bar_ab + n_b * n_b * k_bar_bb
    residual = abs(total - reconstructed) / total
    r_b = 2.0 * (n_a / n_b) * (k_bar_ab / k_bar_bb)
    return CouplingReport(
        k_bar_aa=k_bar_aa,
        k_bar_ab=k_bar_ab,
        k_bar_bb=k_bar_bb,
        r_b=r_b,
        decomposition_residual=residual,
        n_a=n_a,
        n_b=n_b,
    )


def pca_project(
    errors: ErrorSet, components: int = 2
) -> Tuple[np.ndarray, np.ndarray]:
    """Project mean-centered samples onto the top covariance eigenvectors.

    Returns (N x components coordinates, explained-variance fractions).
    The D x D covariance is eigendecomposed directly (D is small here);
    each eigenvector's largest-magnitude entry is forced positive so the
    projection is reproducible up to that fixed convention. Fractions
    are nonincreasing and sum to at most 1; a fully collapsed set
    reports zero coordinates and zero fractions.
    """
    n, d = errors.samples.shape
    if n < 2:
        raise ConfigurationError("at least 2 samples are required")
    if not 1 <= components <= d:
        raise ConfigurationError(
            f"components must be in [1, {d}], got {components}"
        )
    centered = errors.samples - errors.samples.mean(axis=0, keepdims=True)
    cov = centered.T @ centered / n
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:components]
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]
    for j in range(eigvecs.shape[1]):
        pivot = np.argmax(np.abs(eigvecs[:, j]))
        if eigvecs[pivot, j] < 0:
            eigvecs[:, j] = -eigvecs[:, j]
    total_var = float(np.trace(cov))
    if total_var <= 0.0:
        fractions = np.zeros(components)
    else:
        fractions = np.maximum(eigvals, 0.0) / total_var
    coords = centered @ eigvecs
    return coords, fractions


def entropy_curve(
    history: Sequence[ErrorSet],
    sigma: float,
    steps: Optional[Sequence[int]] = None,
) -> List[Tuple[int, float]]:
    """Entropy estimate per snapshot, in step order.

    ``steps`` supplies the step index of each snapshot; when omitted,
    snapshots are numbered 0, 1, 2, ...
    """
    if len(history) == 0:
        raise InputError("history must contain at least one snapshot")
    if steps is None:
        steps = range(len(history))
    steps = [int(s) for s in steps]
    if len(steps) != len(history):
        raise InputError(
            f"got {len(steps)} steps for {len(history)} snapshots"
        )
    return [(s, renyi_entropy_estimate(snap, sigma)) for s, snap in zip(steps, history)]
