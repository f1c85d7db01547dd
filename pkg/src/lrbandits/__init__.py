"""Low-rank multi-task representation learning for linear contextual bandits.

A library and CLI implementing the LRRL-AltGDMin estimator (truncated
spectral initialization plus alternating exact-minimization and projected
gradient descent), baselines (plain alternating GD, method of moments,
per-task Thompson sampling), bandit simulation with epoch schedules, and a
reproducible multi-trial experiment harness.
"""

from .bandit import (
    EpochSchedule,
    ExperimentTrace,
    ThompsonPosterior,
    epoch_schedule,
    greedy_action,
    per_task_regret,
    regret_of,
    run_lrrl,
    run_mom,
    run_thompson,
)
from .config import ALGORITHMS, ExperimentConfig, load_config
from .environment import (
    GroundTruth,
    ProblemConfig,
    SyntheticEnvironment,
    generate_ground_truth,
    generate_ground_truth_with_spectrum,
    reward,
    rng_from,
    sample_arm_set,
    synthetic_batches,
)
from .errors import (
    ConfigError,
    DegenerateInputError,
    DivergenceError,
    IdxParseError,
    ParameterError,
)
from .estimators import (
    FactorEstimate,
    GdConfig,
    SplitBatches,
    TaskBatch,
    altgd_baseline,
    altgdmin_epoch,
    cost,
    grad_b,
    grad_w,
    min_w,
    mom_estimate,
    no_split,
    sample_split,
    spectral_init,
    truncation_threshold,
)
from .harness import AggregateResult, run_experiment, write_csv
from .linalg import (
    frobenius_norm,
    least_squares,
    qr_decompose,
    spectral_norm,
    subspace_error,
    top_r_left_singular_vectors,
)
from .mnist import MnistEnvironment, MnistTaskWorld, load_mnist_idx, mnist_round

__version__ = "0.1.0"
