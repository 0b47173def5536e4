"""Desk-scale behavior cloning on synthetic trajectory-regression tasks.

Small deterministic tasks and policies sized so a full training run
takes seconds, with every gradient auditable against the
finite-difference oracle. Three task generators are built in:

* ``sinusoid`` -- smooth phase-tracking; expert actions are linear in
  the (cos, sin) observation features, so a linear policy can drive the
  MSE to zero.
* ``reach_hold`` -- per-trajectory goal reached along a ramp and held.
* ``paired`` -- two tasks A and B sharing the same base expert. Task B
  adds an alternating-sign action offset of magnitude ``delta_task``
  (the error-space overlap control: 0 makes the tasks identical, large
  values keep B's error cloud far from A's). Both tasks also carry a
  shared skewed demonstrator pattern on the last action axis, which the
  observation features cannot express; it gives the error distribution
  a persistent asymmetric mode structure, the regime where entropy
  shaping and cross-task coupling are visible at all.

Training is plain full-batch (or minibatch) gradient descent with a
fixed learning rate; no adaptive optimizer, so the parameter-gradient
path stays simple enough to spot-check numerically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import ConfigurationError, DivergenceError, InputError, VerificationError
from .kernel import ErrorSet, flatten_batch
from .losses import (
    VARIANT_TMEE,
    LossConfig,
    mse_loss,
    tmee_loss,
    warmup_steps,
    weighted_tmee_loss,
)
from .gradients import (
    GradientField,
    chain_to_parameters,
    mse_gradient,
    tmee_gradient,
    weighted_tmee_gradient,
)
from .analysis import TaskPartition, coupling_ratio
from .noise import NoiseSpec, corrupt_actions

__all__ = [
    "ARCH_LINEAR",
    "ARCH_MLP2",
    "ARCHITECTURES",
    "TASK_NAMES",
    "TaskRecipe",
    "TrajectoryBatch",
    "Policy",
    "make_policy",
    "TrainConfig",
    "TrainReport",
    "generate_tasks",
    "train",
    "clean_mse",
    "sample_partition",
    "run_noise_bench",
    "NoiseBenchReport",
    "run_imbalance_sweep",
    "ImbalanceCell",
]

ARCH_LINEAR = "linear"
ARCH_MLP2 = "mlp2"
ARCHITECTURES = (ARCH_LINEAR, ARCH_MLP2)
DEFAULT_LEARNING_RATES = {ARCH_LINEAR: 1e-2, ARCH_MLP2: 1e-3}

TASK_NAMES = ("sinusoid", "reach_hold", "paired")

# Task B's action-offset pattern over timesteps: most steps carry a
# small positive deviation, every 5th a large negative one. Zero mean,
# so the offset is orthogonal to the (constant) task-indicator feature
# and survives as a persistent, skewed error-space separation of
# magnitude scale delta_task. Exactly zero-mean when horizon % 5 == 0.
OFFSET_PERIOD = 5
OFFSET_BULK = 0.5
OFFSET_TAIL = -2.0

_RECIPE_KEYS = (
    "name",
    "n_trajectories",
    "horizon",
    "chunk",
    "action_dim",
    "target_noise_std",
    "delta_task",
    "majority_trajectories",
    "minority_trajectories",
)


@dataclass(frozen=True)
class TaskRecipe:
    """Parameters of a built-in synthetic task generator."""

    name: str = "sinusoid"
    n_trajectories: int = 8
    horizon: int = 16
    chunk: int = 1
    action_dim: int = 2
    target_noise_std: float = 0.0
    delta_task: float = 0.0
    majority_trajectories: int = 8
    minority_trajectories: int = 8

    def __post_init__(self):
        if self.name not in TASK_NAMES:
            raise ConfigurationError(
                f"unknown task recipe {self.name!r}; built-ins: {TASK_NAMES}"
            )
        for attr in ("n_trajectories", "horizon", "chunk", "action_dim"):
            if getattr(self, attr) < 1:
                raise ConfigurationError(f"{attr} must be >= 1")
        if self.name == "paired" and (
            self.majority_trajectories < 1 or self.minority_trajectories < 1
        ):
            raise ConfigurationError("paired task needs at least one trajectory per group")
        if self.target_noise_std < 0:
            raise ConfigurationError("target_noise_std must be >= 0")

    def to_dict(self) -> dict:
        return {key: getattr(self, key) for key in _RECIPE_KEYS}

    @classmethod
    def from_dict(cls, data: dict) -> "TaskRecipe":
        unknown = set(data) - set(_RECIPE_KEYS)
        if unknown:
            raise ConfigurationError(f"unknown task recipe keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class TrajectoryBatch:
    """Expert demonstrations: observations, clean target actions, task ids."""

    observations: np.ndarray  # (B, T, m)
    target_actions: np.ndarray  # (B, T, K, D)
    task_labels: np.ndarray  # (B,) strings

    def __post_init__(self):
        obs = np.asarray(self.observations, dtype=np.float64)
        act = np.asarray(self.target_actions, dtype=np.float64)
        labels = np.asarray(self.task_labels)
        if obs.ndim != 3 or act.ndim != 4:
            raise InputError(
                f"expected observations (B,T,m) and actions (B,T,K,D), got {obs.shape} / {act.shape}"
            )
        if obs.shape[:2] != act.shape[:2] or labels.shape[0] != obs.shape[0]:
            raise InputError("observation / action / label shapes are inconsistent")
        if not (np.all(np.isfinite(obs)) and np.all(np.isfinite(act))):
            raise InputError("batch values must be finite")
        object.__setattr__(self, "observations", obs)
        object.__setattr__(self, "target_actions", act)
        object.__setattr__(self, "task_labels", labels)

    @property
    def shape(self) -> Tuple[int, int, int, int]:
        b, t, k, d = self.target_actions.shape
        return b, t, k, d


def _offset_pattern(horizon: int) -> np.ndarray:
    values = np.full(horizon, OFFSET_BULK)
    values[OFFSET_PERIOD - 1 :: OFFSET_PERIOD] = OFFSET_TAIL
    return values


def generate_tasks(recipe: TaskRecipe, seed: int) -> TrajectoryBatch:
    """Build a deterministic TrajectoryBatch from a recipe and seed."""
    rng = np.random.default_rng([int(seed), 0])
    t_idx = np.arange(recipe.horizon)
    if recipe.name == "sinusoid":
        return _sinusoid_batch(recipe, rng, t_idx)
    if recipe.name == "reach_hold":
        return _reach_hold_batch(recipe, rng, t_idx)
    return _paired_batch(recipe, rng, t_idx)


def _sinusoid_batch(recipe: TaskRecipe, rng, t_idx) -> TrajectoryBatch:
    b, t, k, d = recipe.n_trajectories, recipe.horizon, recipe.chunk, recipe.action_dim
    step = 2.0 * math.pi / t
    phases = rng.uniform(0.0, 2.0 * math.pi, size=b)
    amps = rng.uniform(0.5, 1.0, size=d)
    shifts = rng.uniform(0.0, 2.0 * math.pi, size=d)
    theta = phases[:, None] + step * t_idx[None, :]  # (B, T)
    obs = np.stack([np.cos(theta), np.sin(theta)], axis=2)
    angles = theta[:, :, None, None] + step * np.arange(k)[None, None, :, None] + shifts
    actions = amps * np.sin(angles)
    if recipe.target_noise_std > 0:
        actions = actions + rng.normal(0.0, recipe.target_noise_std, size=actions.shape)
    labels = np.array(["A"] * b)
    return TrajectoryBatch(observations=obs, target_actions=actions, task_labels=labels)


def _reach_hold_batch(recipe: TaskRecipe, rng, t_idx) -> TrajectoryBatch:
    b, t, k, d = recipe.n_trajectories, recipe.horizon, recipe.chunk, recipe.action_dim
    goals = rng.uniform(-1.0, 1.0, size=(b, d))
    tau = t_idx / max(t - 1, 1)
    ramp = np.minimum(1.0, 2.0 * tau)  # reach during the first half, hold after
    obs = ramp[None, :, None] * goals[:, None, :]
    k_steps = np.minimum(t_idx[:, None] + np.arange(k)[None, :], t - 1)
    ramp_ahead = np.minimum(1.0, 2.0 * k_steps / max(t - 1, 1))  # (T, K)
    actions = ramp_ahead[None, :, :, None] * goals[:, None, None, :]
    if recipe.target_noise_std > 0:
        actions = actions + rng.normal(0.0, recipe.target_noise_std, size=actions.shape)
    labels = np.array(["A"] * b)
    return TrajectoryBatch(observations=obs, target_actions=actions, task_labels=labels)


def _paired_batch(recipe: TaskRecipe, rng, t_idx) -> TrajectoryBatch:
    n_a, n_b = recipe.majority_trajectories, recipe.minority_trajectories
    b = n_a + n_b
    t, k, d = recipe.horizon, recipe.chunk, recipe.action_dim
    step = 2.0 * math.pi / t
    phases = rng.uniform(0.0, 2.0 * math.pi, size=b)
    amps = rng.uniform(0.5, 1.0, size=d)
    shifts = rng.uniform(0.0, 2.0 * math.pi, size=d)
    labels = np.array(["A"] * n_a + ["B"] * n_b)
    is_b = (labels == "B").astype(np.float64)

    theta = phases[:, None] + step * t_idx[None, :]
    obs = np.stack(
        [np.cos(theta), np.sin(theta), np.broadcast_to(is_b[:, None], theta.shape)],
        axis=2,
    )
    angles = theta[:, :, None, None] + step * np.arange(k)[None, None, :, None] + shifts
    actions = amps * np.sin(angles)

    # Task B's expert differs by the delta_task-scaled timestep pattern
    # on the first action axis. The pattern is zero-mean but skewed, so
    # B's error cloud keeps a bimodal, asymmetric structure at the
    # delta_task scale that no observation feature can express.
    pattern = _offset_pattern(t)
    actions[:, :, :, 0] += recipe.delta_task * pattern[None, :, None] * is_b[:, None, None]

    if recipe.target_noise_std > 0:
        actions = actions + rng.normal(0.0, recipe.target_noise_std, size=actions.shape)
    return TrajectoryBatch(observations=obs, target_actions=actions, task_labels=labels)


class Policy:
    """Linear or one-hidden-layer tanh policy with manual backprop.

    Parameters live in a single flat vector so finite differences over
    them are straightforward. ``vjp`` implements the adjoint of the
    batch prediction Jacobian: given per-output gradients it returns
    sum_i (d y_hat_i / d theta)^T g_i as a flat vector.
    """

    def __init__(
        self,
        architecture: str,
        input_dim: int,
        chunk: int,
        action_dim: int,
        hidden: int = 32,
        seed: int = 0,
    ):
        if architecture not in ARCHITECTURES:
            raise ConfigurationError(
                f"architecture must be one of {ARCHITECTURES}, got {architecture!r}"
            )
        self.architecture = architecture
        self.input_dim = int(input_dim)
        self.chunk = int(chunk)
        self.action_dim = int(action_dim)
        self.hidden = int(hidden)
        self.out_dim = self.chunk * self.action_dim
        rng = np.random.default_rng([int(seed), 2])
        if architecture == ARCH_LINEAR:
            self.theta = np.zeros((self.out_dim) * (self.input_dim + 1))
        else:
            w1 = rng.normal(0.0, 1.0 / math.sqrt(self.input_dim + 1), size=(self.hidden, self.input_dim + 1))
            w2 = rng.normal(0.0, 1.0 / math.sqrt(self.hidden + 1), size=(self.out_dim, self.hidden + 1))
            self.theta = np.concatenate([w1.ravel(), w2.ravel()])

    @property
    def n_params(self) -> int:
        return self.theta.size

    def _linear_w(self) -> np.ndarray:
        return self.theta.reshape(self.out_dim, self.input_dim + 1)

    def _mlp_w(self) -> Tuple[np.ndarray, np.ndarray]:
        n1 = self.hidden * (self.input_dim + 1)
        w1 = self.theta[:n1].reshape(self.hidden, self.input_dim + 1)
        w2 = self.theta[n1:].reshape(self.out_dim, self.hidden + 1)
        return w1, w2

    @staticmethod
    def _augment(x: np.ndarray) -> np.ndarray:
        return np.concatenate([x, np.ones((x.shape[0], 1))], axis=1)

    def predict(self, observations: np.ndarray) -> np.ndarray:
        x = self._augment(np.asarray(observations, dtype=np.float64))
        if self.architecture == ARCH_LINEAR:
            return x @ self._linear_w().T
        w1, w2 = self._mlp_w()
        h = np.tanh(x @ w1.T)
        return self._augment(h) @ w2.T

    def vjp(self, observations: np.ndarray, output_grads: np.ndarray) -> np.ndarray:
        x = self._augment(np.asarray(observations, dtype=np.float64))
        g = np.asarray(output_grads, dtype=np.float64)
        if g.shape != (x.shape[0], self.out_dim):
            raise InputError(
                f"output gradients must have shape {(x.shape[0], self.out_dim)}, got {g.shape}"
            )
        if self.architecture == ARCH_LINEAR:
            return (g.T @ x).ravel()
        w1, w2 = self._mlp_w()
        h = np.tanh(x @ w1.T)
        h_aug = self._augment(h)
        d_w2 = g.T @ h_aug
        d_h = g @ w2[:, : self.hidden]
        d_pre = d_h * (1.0 - h * h)
        d_w1 = d_pre.T @ x
        return np.concatenate([d_w1.ravel(), d_w2.ravel()])

    def copy(self) -> "Policy":
        dup = Policy.__new__(Policy)
        dup.__dict__.update(self.__dict__)
        dup.theta = self.theta.copy()
        return dup


def make_policy(
    architecture: str,
    batch: TrajectoryBatch,
    hidden: int = 32,
    seed: int = 0,
) -> Policy:
    """Policy shaped to a batch's observation and action dimensions."""
    _, _, k, d = batch.shape
    return Policy(
        architecture,
        input_dim=batch.observations.shape[2],
        chunk=k,
        action_dim=d,
        hidden=hidden,
        seed=seed,
    )


@dataclass(frozen=True)
class TrainConfig:
    """Training-run parameters. learning_rate=None picks the
    architecture default (1e-2 linear, 1e-3 mlp2)."""

    loss: LossConfig = field(default_factory=LossConfig)
    steps: int = 1000
    learning_rate: Optional[float] = None
    batch_size: Optional[int] = None
    seed: int = 0
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    snapshot_every: int = 250
    verify_every: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigurationError(f"steps must be >= 1, got {self.steps}")
        if self.learning_rate is not None and self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be > 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.snapshot_every < 1:
            raise ConfigurationError("snapshot_every must be >= 1")
        if self.verify_every < 0:
            raise ConfigurationError("verify_every must be >= 0")


@dataclass
class TrainReport:
    """Per-step metrics, periodic error snapshots, and final evaluation."""

    steps: np.ndarray
    total: np.ndarray
    mse: np.ndarray
    entropy: np.ndarray
    grad_norm: np.ndarray
    snapshots: List[Tuple[int, ErrorSet]]
    activation_step: int
    entropy_sigma: float
    final_clean_mse: float
    per_task_clean_mse: Dict[str, float]
    seed: int

    def metrics_rows(self) -> List[Tuple[int, float, float, float, float]]:
        return [
            (int(s), float(t), float(m), float(h), float(g))
            for s, t, m, h, g in zip(
                self.steps, self.total, self.mse, self.entropy, self.grad_norm
            )
        ]


def _error_set(
    predictions: np.ndarray,
    targets: np.ndarray,
    prov: np.ndarray,
    chunk: int,
    action_dim: int,
) -> ErrorSet:
    errors = (predictions - targets).reshape(-1, action_dim)
    return ErrorSet(samples=errors, provenance=prov)


def _chunk_provenance(batch: TrajectoryBatch, rows: np.ndarray) -> np.ndarray:
    """(b, t, k) provenance for the error samples of the given observation rows."""
    _, t, k, _ = batch.shape
    b_idx = rows // t
    t_idx = rows % t
    prov = np.empty((rows.size * k, 3), dtype=np.int64)
    prov[:, 0] = np.repeat(b_idx, k)
    prov[:, 1] = np.repeat(t_idx, k)
    prov[:, 2] = np.tile(np.arange(k), rows.size)
    return prov


def train(
    batch: TrajectoryBatch,
    policy: Policy,
    config: TrainConfig,
) -> Tuple[Policy, TrainReport]:
    """Gradient-descent behavior cloning with the two-phase objective.

    Targets are corrupted once per run according to ``config.noise``;
    the clean targets are kept for evaluation. Metrics are logged at
    every step before the parameter update; the entropy column is the
    quadratic Renyi estimate of the current error set at the loss
    bandwidth, recorded from step 0 so warmup and active phases share
    one curve. Deterministic given the config seed.

    Raises DivergenceError if the loss becomes non-finite, and
    VerificationError if a ``verify_every`` spot check of the parameter
    gradient against central finite differences (1e-5 relative) fails.
    """
    b, t, k, d = batch.shape
    loss_cfg = config.loss
    lr = config.learning_rate
    if lr is None:
        lr = DEFAULT_LEARNING_RATES[policy.architecture]
    policy = policy.copy()

    x_all = batch.observations.reshape(b * t, -1)
    y_clean = batch.target_actions.reshape(b * t, k * d)
    noisy = corrupt_actions(batch.target_actions, config.noise)
    y_train = noisy.reshape(b * t, k * d)

    n_obs = x_all.shape[0]
    rng = np.random.default_rng([int(config.seed), 1])
    activation = warmup_steps(loss_cfg, config.steps)
    all_rows = np.arange(n_obs)
    full_prov = _chunk_provenance(batch, all_rows)

    steps_log = np.arange(config.steps)
    total_log = np.empty(config.steps)
    mse_log = np.empty(config.steps)
    entropy_log = np.empty(config.steps)
    gnorm_log = np.empty(config.steps)
    snapshots: List[Tuple[int, ErrorSet]] = []

    def batch_loss_at(theta: np.ndarray, rows: np.ndarray, active: bool) -> float:
        saved = policy.theta
        policy.theta = theta
        try:
            preds = policy.predict(x_all[rows])
            es = _error_set(preds, y_train[rows], None, k, d)
            value = mse_loss(es)
            if active and loss_cfg.alpha > 0:
                if loss_cfg.variant == VARIANT_TMEE:
                    value += loss_cfg.alpha * tmee_loss(es, loss_cfg.sigma)
                else:
                    value += loss_cfg.alpha * weighted_tmee_loss(es, loss_cfg)
            return value
        finally:
            policy.theta = saved

    for step in range(config.steps):
        if config.batch_size is None or config.batch_size >= n_obs:
            rows = all_rows
            prov = full_prov
        else:
            rows = np.sort(rng.choice(n_obs, size=config.batch_size, replace=False))
            prov = _chunk_provenance(batch, rows)
        preds = policy.predict(x_all[rows])
        errors = _error_set(preds, y_train[rows], prov, k, d)

        mse_field = mse_gradient(errors)
        active = step >= activation and loss_cfg.alpha > 0
        if loss_cfg.variant == VARIANT_TMEE:
            ent_field = tmee_gradient(errors, loss_cfg.sigma)
            renyi = ent_field.loss_value
        else:
            ent_field = weighted_tmee_gradient(errors, loss_cfg)
            renyi = tmee_loss(errors, loss_cfg.sigma)
        if active:
            sample_grads = mse_field.grads + loss_cfg.alpha * ent_field.grads
            total = mse_field.loss_value + loss_cfg.alpha * ent_field.loss_value
        else:
            sample_grads = mse_field.grads
            total = mse_field.loss_value

        if not math.isfinite(total):
            raise DivergenceError(
                f"loss became non-finite at step {step}",
                diagnostics={
                    "step": step,
                    "mse": mse_field.loss_value,
                    "entropy_term": ent_field.loss_value,
                    "learning_rate": lr,
                },
            )

        field_for_params = GradientField(
            grads=sample_grads.reshape(rows.size, k * d), loss_value=total
        )
        param_grad = chain_to_parameters(
            field_for_params, lambda g: policy.vjp(x_all[rows], g)
        )

        if config.verify_every and step % config.verify_every == 0:
            _verify_param_grad(policy, param_grad, rows, active, batch_loss_at, step)

        total_log[step] = total
        mse_log[step] = mse_field.loss_value
        entropy_log[step] = renyi
        gnorm_log[step] = float(np.linalg.norm(param_grad))
        if step % config.snapshot_every == 0 or step == config.steps - 1:
            snapshots.append((step, errors))

        policy.theta = policy.theta - lr * param_grad

    final_preds = policy.predict(x_all)
    final_err = final_preds - y_clean
    per_sample = np.einsum("ij,ij->i", final_err.reshape(-1, d), final_err.reshape(-1, d))
    per_sample = per_sample.reshape(n_obs, k)
    final_clean = float(per_sample.mean())
    per_task: Dict[str, float] = {}
    row_labels = np.repeat(batch.task_labels, t)
    for label in np.unique(batch.task_labels):
        per_task[str(label)] = float(per_sample[row_labels == label].mean())

    report = TrainReport(
        steps=steps_log,
        total=total_log,
        mse=mse_log,
        entropy=entropy_log,
        grad_norm=gnorm_log,
        snapshots=snapshots,
        activation_step=activation,
        entropy_sigma=loss_cfg.sigma,
        final_clean_mse=final_clean,
        per_task_clean_mse=per_task,
        seed=config.seed,
    )
    return policy, report


def _verify_param_grad(policy, param_grad, rows, active, batch_loss_at, step, h=1e-6):
    fd = np.empty_like(policy.theta)
    for j in range(policy.theta.size):
        plus = policy.theta.copy()
        plus[j] += h
        minus = policy.theta.copy()
        minus[j] -= h
        fd[j] = (batch_loss_at(plus, rows, active) - batch_loss_at(minus, rows, active)) / (2 * h)
    denom = max(float(np.linalg.norm(fd)), 1e-12)
    rel = float(np.linalg.norm(fd - param_grad)) / denom
    if rel > 1e-5:
        raise VerificationError(
            f"parameter gradient mismatch at step {step}: relative error {rel:.3e}"
        )


def clean_mse(policy: Policy, batch: TrajectoryBatch, task: Optional[str] = None) -> float:
    """MSE of a policy against the batch's clean targets, optionally per task."""
    b, t, k, d = batch.shape
    preds = policy.predict(batch.observations.reshape(b * t, -1))
    err = preds - batch.target_actions.reshape(b * t, k * d)
    per_sample = np.einsum("ij,ij->i", err.reshape(-1, d), err.reshape(-1, d)).reshape(b * t, k)
    if task is None:
        return float(per_sample.mean())
    mask = np.repeat(batch.task_labels == task, t)
    if not mask.any():
        raise InputError(f"no trajectories with task label {task!r}")
    return float(per_sample[mask].mean())


def sample_partition(batch: TrajectoryBatch, errors: ErrorSet) -> TaskPartition:
    """Task partition of an error snapshot via its trajectory provenance."""
    if errors.provenance is None:
        raise InputError("error set has no provenance; cannot derive a partition")
    labels = batch.task_labels[errors.provenance[:, 0]]
    return TaskPartition(labels=np.asarray(labels))


@dataclass
class NoiseBenchReport:
    """Paired clean-target MSE of the plain and entropy-augmented arms."""

    rows: List[Tuple[int, float, float]]  # (seed, mse_only, mse_plus_entropy)

    @property
    def median_mse_only(self) -> float:
        return float(np.median([r[1] for r in self.rows]))

    @property
    def median_mse_tmee(self) -> float:
        return float(np.median([r[2] for r in self.rows]))


def run_noise_bench(
    recipe: TaskRecipe,
    config: TrainConfig,
    seeds: Sequence[int],
) -> NoiseBenchReport:
    """Train both objectives on identically corrupted targets per seed.

    The baseline arm sets alpha = 0 (pure pointwise regression); the
    other arm uses ``config.loss`` as given. Both arms share the task,
    the policy initialization, and the exact corruption; the reported
    numbers are clean-target MSE.
    """
    rows = []
    for seed in seeds:
        batch = generate_tasks(recipe, seed)
        noise = replace(config.noise, seed=int(seed) + 90001)
        base_cfg = replace(config, seed=int(seed), noise=noise)
        policy = make_policy(ARCH_LINEAR, batch, seed=seed)
        cfg_plain = replace(base_cfg, loss=replace(config.loss, alpha=0.0))
        plain, _ = train(batch, policy, cfg_plain)
        entropic, _ = train(batch, policy, base_cfg)
        rows.append((int(seed), clean_mse(plain, batch), clean_mse(entropic, batch)))
    return NoiseBenchReport(rows=rows)


@dataclass
class ImbalanceCell:
    """One (ratio, overlap) cell of the imbalance sweep."""

    ratio: float
    overlap_delta: float
    seeds: List[int]
    r_b: List[float]
    minority_mse: List[float]
    balanced_minority_mse: List[float]

    @property
    def median_r_b(self) -> float:
        return float(np.median(self.r_b))

    @property
    def median_delta(self) -> float:
        deltas = np.asarray(self.minority_mse) - np.asarray(self.balanced_minority_mse)
        return float(np.median(deltas))


def _first_active_snapshot(report: TrainReport) -> Tuple[int, ErrorSet]:
    for step, snap in report.snapshots:
        if step >= report.activation_step:
            return step, snap
    return report.snapshots[-1]


def _sweep_worker(
    ratio: float,
    overlap: float,
    seed: int,
    recipe: TaskRecipe,
    config: TrainConfig,
) -> Tuple[float, float, float]:
    minority = max(1, round(recipe.majority_trajectories / ratio))
    rec_imb = replace(
        recipe,
        name="paired",
        delta_task=float(overlap),
        minority_trajectories=minority,
    )
    rec_bal = replace(rec_imb, minority_trajectories=recipe.majority_trajectories)
    run_cfg = replace(config, seed=int(seed))

    batch = generate_tasks(rec_imb, seed)
    policy = make_policy(ARCH_LINEAR, batch, seed=seed)
    trained, report = train(batch, policy, run_cfg)
    _, snap = _first_active_snapshot(report)
    coupling = coupling_ratio(snap, sample_partition(batch, snap), config.loss.sigma)

    bal_batch = generate_tasks(rec_bal, seed)
    bal_policy = make_policy(ARCH_LINEAR, bal_batch, seed=seed)
    bal_trained, _ = train(bal_batch, bal_policy, run_cfg)

    return (
        coupling.r_b,
        clean_mse(trained, batch, task="B"),
        clean_mse(bal_trained, bal_batch, task="B"),
    )


def run_imbalance_sweep(
    ratios: Sequence[float],
    overlaps: Sequence[float],
    recipe: TaskRecipe,
    config: TrainConfig,
    seeds: Sequence[int],
    threads: int = 1,
) -> List[ImbalanceCell]:
    """Joint two-task training across imbalance ratios and overlap levels.

    For each (ratio, overlap) cell and seed, trains with majority count
    fixed at ``recipe.majority_trajectories`` and minority count
    majority/ratio (at least 1), measures the coupling ratio on the
    first snapshot at or after entropy activation, evaluates the final
    minority-task clean MSE, and pairs it with a balanced run (ratio 1,
    same seed and overlap). Independent (cell, seed) runs may execute on
    worker threads; results are assembled in a fixed order regardless of
    scheduling.
    """
    if any(r < 1 for r in ratios):
        raise ConfigurationError("imbalance ratios must be >= 1")
    jobs = [
        (float(ratio), float(overlap), int(seed))
        for ratio in ratios
        for overlap in overlaps
        for seed in seeds
    ]
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(
                pool.map(lambda j: _sweep_worker(*j, recipe, config), jobs)
            )
    else:
        results = [_sweep_worker(*job, recipe, config) for job in jobs]

    cells: List[ImbalanceCell] = []
    job_iter = iter(zip(jobs, results))
    for ratio in ratios:
        for overlap in overlaps:
            cell = ImbalanceCell(
                ratio=float(ratio),
                overlap_delta=float(overlap),
                seeds=[],
                r_b=[],
                minority_mse=[],
                balanced_minority_mse=[],
            )
            for _ in seeds:
                (job_ratio, job_overlap, job_seed), (r_b, mino, bal) = next(job_iter)
                cell.seeds.append(job_seed)
                cell.r_b.append(r_b)
                cell.minority_mse.append(mino)
                cell.balanced_minority_mse.append(bal)
            cells.append(cell)
    return cells
