"""Trajectory-level minimum-error-entropy losses and experiment harness."""

from .exceptions import (
    ConfigurationError,
    DivergenceError,
    EntroshapeError,
    InputError,
    VerificationError,
)
from .kernel import (
    ErrorSet,
    KernelMatrix,
    flatten_batch,
    information_potential,
    load_error_csv,
    pairwise_kernel,
    save_error_csv,
)
from .losses import (
    LossBreakdown,
    LossConfig,
    WeightVector,
    chunk_weights,
    mse_loss,
    tmee_loss,
    total_loss,
    weighted_tmee_loss,
)
from .gradients import (
    GradientField,
    chain_to_parameters,
    finite_difference_oracle,
    influence_curve,
    tight_bulk,
    tmee_gradient,
    weighted_tmee_gradient,
)
from .analysis import (
    CouplingReport,
    TaskPartition,
    coupling_ratio,
    entropy_curve,
    mse_identity_check,
    pca_project,
    renyi_entropy_estimate,
    taylor_potential,
)
from .noise import NoiseSpec, corrupt_actions
from .trainer import (
    Policy,
    TaskRecipe,
    TrainConfig,
    TrainReport,
    TrajectoryBatch,
    clean_mse,
    generate_tasks,
    make_policy,
    run_imbalance_sweep,
    run_noise_bench,
    train,
)

__version__ = "0.1.0"
