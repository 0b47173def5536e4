"""Pairwise Gaussian kernels over action-error samples.

Everything downstream (losses, gradients, coupling diagnostics) is built
from two quantities computed here: the N x N matrix of error
similarities k_ij = exp(-||e_i - e_j||^2 / (2 sigma^2)) and its total
mass Z = sum_ij k_ij, the information potential. Computations are double
precision and deterministic; an optional blocked reduction with a fixed
block order is provided for large N.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .exceptions import ConfigurationError, InputError

__all__ = [
    "ErrorSet",
    "KernelMatrix",
    "pairwise_sq_dists",
    "pairwise_kernel",
    "information_potential",
    "flatten_batch",
    "save_error_csv",
    "load_error_csv",
]


@dataclass(frozen=True)
class ErrorSet:
    """A set of N action-error vectors in R^D.

    ``samples`` has shape (N, D). ``provenance``, when present, is an
    (N, 3) integer array of (trajectory b, timestep t, chunk step k)
    indices, unique per sample. Sets built by :func:`flatten_batch` are
    ordered row-major over (b, t, k); that order is fixed so that
    provenance-based analyses are reproducible.
    """

    samples: np.ndarray
    provenance: Optional[np.ndarray] = None

    def __post_init__(self):
        try:
            samples = np.asarray(self.samples, dtype=np.float64)
        except (ValueError, TypeError) as exc:
            raise InputError(f"samples are ragged or non-numeric: {exc}") from exc
        if samples.ndim == 1:
            samples = samples[:, None]
        if samples.ndim != 2 or samples.shape[0] < 1 or samples.shape[1] < 1:
            raise InputError(
                f"samples must be an (N, D) array with N, D >= 1, got shape {np.shape(self.samples)}"
            )
        if not np.all(np.isfinite(samples)):
            raise InputError("error samples must be finite")
        object.__setattr__(self, "samples", samples)
        if self.provenance is not None:
            prov = np.asarray(self.provenance, dtype=np.int64)
            if prov.shape != (samples.shape[0], 3):
                raise InputError(
                    f"provenance must have shape (N, 3), got {prov.shape}"
                )
            if np.unique(prov, axis=0).shape[0] != prov.shape[0]:
                raise InputError("provenance indices must be unique per sample")
            object.__setattr__(self, "provenance", prov)

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True)
class KernelMatrix:
    """Symmetric matrix of pairwise Gaussian kernel values in (0, 1]."""

    entries: np.ndarray
    sigma: float


def _check_sigma(sigma: float) -> float:
    sigma = float(sigma)
    if not np.isfinite(sigma) or sigma <= 0.0:
        raise ConfigurationError(f"kernel bandwidth must be positive, got {sigma}")
    return sigma


def _sq_dists_raw(samples: np.ndarray) -> np.ndarray:
    """Clamped Gram-factorized squared distances, without symmetrization.

    Off-diagonal (i, j) and (j, i) agree to rounding (identically in
    practice); internal hot paths use this directly.
    """
    samples = np.asarray(samples, dtype=np.float64)
    gram = samples @ samples.T
    sq_norms = np.einsum("ij,ij->i", samples, samples)
    d2 = gram
    d2 *= -2.0
    d2 += sq_norms[:, None]
    d2 += sq_norms[None, :]
    np.maximum(d2, 0.0, out=d2)
    return d2


def pairwise_sq_dists(samples: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between all rows of ``samples``.

    Uses the Gram-matrix factorization ||a||^2 + ||b||^2 - 2 a.b rather
    than per-pair difference vectors, so cost is O(N^2 + N^2 D) with a
    single matrix product. Cancellation can produce slightly negative
    values, which are clamped at zero; the upper triangle is mirrored so
    the result is exactly symmetric with an exactly zero diagonal.
    """
    upper = np.triu(_sq_dists_raw(samples), 1)
    return upper + upper.T


def pairwise_kernel(errors: ErrorSet, sigma: float) -> KernelMatrix:
    """Gaussian kernel matrix k_ij = exp(-||e_i - e_j||^2 / (2 sigma^2)).

    The diagonal is exactly 1 and the matrix equals its transpose
    exactly (same floating values).
    """
    sigma = _check_sigma(sigma)
    d2 = pairwise_sq_dists(errors.samples)
    entries = np.exp(d2 / (-2.0 * sigma * sigma))
    return KernelMatrix(entries=entries, sigma=sigma)


def information_potential(
    errors: ErrorSet,
    sigma: float,
    block_size: Optional[int] = None,
    threads: int = 1,
) -> float:
    """Total kernel mass Z = sum_ij k_ij, with N <= Z <= N^2.

    Diagonal terms are included: they contribute a constant N and carry
    zero gradient. The default evaluation sums the full matrix in
    numpy's fixed deterministic order. When ``block_size`` is given the
    sum is accumulated per row block, in block order; blocks may be
    evaluated on ``threads`` worker threads, with the reduction always
    performed in block order so the result is independent of scheduling.
    """
    entries = pairwise_kernel(errors, sigma).entries
    if block_size is None:
        return float(np.sum(entries))
    if block_size < 1:
        raise ConfigurationError(f"block_size must be >= 1, got {block_size}")
    n = entries.shape[0]
    starts = range(0, n, block_size)

    def block_sum(start: int) -> float:
        return float(np.sum(entries[start : start + block_size]))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            partials = list(pool.map(block_sum, starts))
    else:
        partials = [block_sum(start) for start in starts]
    total = 0.0
    for part in partials:
        total += part
    return total


def flatten_batch(batch_errors) -> ErrorSet:
    """Flatten a B x T x K array of R^D error vectors into an ErrorSet.

    Row-major order over (b, t, k), with provenance recorded, so
    N = B*T*K and sample (b, t, k) lands at index (b*T + t)*K + k.
    """
    try:
        arr = np.asarray(batch_errors)
    except ValueError as exc:
        raise InputError(f"batch errors are ragged: {exc}") from exc
    if arr.dtype == object:
        raise InputError("batch errors are ragged; a rectangular B x T x K x D array is required")
    arr = arr.astype(np.float64, copy=False)
    if arr.ndim != 4:
        raise InputError(
            f"batch errors must have shape (B, T, K, D), got {arr.shape}"
        )
    b, t, k, d = arr.shape
    if min(b, t, k, d) < 1:
        raise InputError(f"all of B, T, K, D must be >= 1, got {arr.shape}")
    bb, tt, kk = np.meshgrid(np.arange(b), np.arange(t), np.arange(k), indexing="ij")
    provenance = np.stack([bb.ravel(), tt.ravel(), kk.ravel()], axis=1)
    return ErrorSet(samples=arr.reshape(b * t * k, d), provenance=provenance)


def save_error_csv(errors: ErrorSet, path: Union[str, Path]) -> None:
    """Write an ErrorSet as CSV: header row, then b,t,k,e_0..e_{D-1}.

    Floats are written with shortest round-trip repr, so loading
    restores bit-identical values. Sets without provenance are written
    with synthetic indices (0, i, 0).
    """
    path = Path(path)
    n, d = errors.samples.shape
    prov = errors.provenance
    if prov is None:
        prov = np.stack(
            [np.zeros(n, dtype=np.int64), np.arange(n), np.zeros(n, dtype=np.int64)],
            axis=1,
        )
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["b", "t", "k"] + [f"e_{j}" for j in range(d)])
        for i in range(n):
            row = [int(prov[i, 0]), int(prov[i, 1]), int(prov[i, 2])]
            row += [repr(float(v)) for v in errors.samples[i]]
            writer.writerow(row)


def load_error_csv(path: Union[str, Path]) -> ErrorSet:
    """Read an ErrorSet written by :func:`save_error_csv`."""
    path = Path(path)
    with path.open("r", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:3] != ["b", "t", "k"]:
            raise InputError(f"{path}: expected header starting with b,t,k")
        dim = len(header) - 3
        if dim < 1:
            raise InputError(f"{path}: no error coordinate columns found")
        prov_rows = []
        sample_rows = []
        for row in reader:
            if not row:
                continue
            if len(row) != 3 + dim:
                raise InputError(f"{path}: row has {len(row)} fields, expected {3 + dim}")
            prov_rows.append([int(row[0]), int(row[1]), int(row[2])])
            sample_rows.append([float(v) for v in row[3:]])
    if not sample_rows:
        raise InputError(f"{path}: no samples")
    return ErrorSet(
        samples=np.array(sample_rows, dtype=np.float64),
        provenance=np.array(prov_rows, dtype=np.int64),
    )
