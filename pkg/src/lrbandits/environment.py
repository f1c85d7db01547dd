"""Synthetic bandit environments with a planted low-rank reward matrix.

Randomness everywhere in this package flows through numpy's Philox counter
generator seeded by SeedSequence, so streams are reproducible bit-for-bit
and can be split into independent children per (trial, purpose) without any
ordering coupling between consumers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .linalg import qr_decompose

__all__ = [
    "ProblemConfig",
    "GroundTruth",
    "rng_from",
    "generate_ground_truth",
    "generate_ground_truth_with_spectrum",
    "sample_arm_set",
    "reward",
    "synthetic_batches",
    "SyntheticEnvironment",
]


def rng_from(seed) -> np.random.Generator:
    """Philox generator from an int seed or a SeedSequence."""
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(seed))


@dataclass(eq=False)
class ProblemConfig:
    """Dimensions and noise level of one bandit problem instance.

    d: feature dimension, T: task count, r: planted/estimated rank,
    K: arms offered per round, N: rounds per task, noise_variance: variance
    of the additive reward noise, seed: master seed for all streams.
    ``arm_mean`` optionally shifts the Gaussian arm features off zero.
    """

    d: int
    T: int
    r: int
    K: int
    N: int
    noise_variance: float = 0.0
    seed: int = 0
    arm_mean: np.ndarray | None = None

    def __post_init__(self):
        if min(self.d, self.T, self.r, self.K, self.N) < 1:
            raise ParameterError("d, T, r, K, N must all be >= 1")
        if self.r > min(self.d, self.T):
            raise ParameterError(f"r={self.r} exceeds min(d={self.d}, T={self.T})")
        if self.noise_variance < 0:
            raise ParameterError("noise_variance must be >= 0")
        if self.arm_mean is not None:
            self.arm_mean = np.asarray(self.arm_mean, dtype=float)
            if self.arm_mean.shape != (self.d,):
                raise ParameterError(f"arm_mean must have shape ({self.d},)")

    @property
    def noise_std(self) -> float:
        return float(np.sqrt(self.noise_variance))


@dataclass(eq=False)
class GroundTruth:
    """Planted rank-r reward matrix Theta = B W and its spectrum.

    B is d x r orthonormal, W is r x T, so Theta's nonzero singular values
    equal W's. ``kappa`` is sigma_max/sigma_min and ``mu`` is the smallest
    constant with ||w_t||^2 <= mu^2 (r/T) sigma_max^2 for every task t.
    """

    B_star: np.ndarray
    W_star: np.ndarray
    Theta_star: np.ndarray
    sigma_max: float
    sigma_min: float
    kappa: float
    mu: float

    @classmethod
    def from_factors(cls, b_star: np.ndarray, w_star: np.ndarray) -> "GroundTruth":
        r, T = w_star.shape
        svals = np.linalg.svd(w_star, compute_uv=False)
        sigma_max, sigma_min = float(svals[0]), float(svals[-1])
        if sigma_min <= 0:
            raise ParameterError("coefficient matrix is rank-deficient")
        col_norms = np.linalg.norm(w_star, axis=0)
        mu = float(col_norms.max() * np.sqrt(T / r) / sigma_max)
        return cls(
            B_star=b_star,
            W_star=w_star,
            Theta_star=b_star @ w_star,
            sigma_max=sigma_max,
            sigma_min=sigma_min,
            kappa=sigma_max / sigma_min,
            mu=mu,
        )


def generate_ground_truth(cfg: ProblemConfig, rng: np.random.Generator) -> GroundTruth:
    """Planted instance: B from orthonormalized Gaussian, W raw i.i.d. Gaussian.

    kappa and mu are measured from W's realized spectrum, not imposed.
    """
    b_star, _ = qr_decompose(rng.standard_normal((cfg.d, cfg.r)))
    w_star = rng.standard_normal((cfg.r, cfg.T))
    return GroundTruth.from_factors(b_star, w_star)


def generate_ground_truth_with_spectrum(
    cfg: ProblemConfig, singular_values, rng: np.random.Generator
) -> GroundTruth:
    """Planted instance with an exactly prescribed singular spectrum.

    W = diag(s) V^T with V orthonormal, so kappa = s[0]/s[-1] by construction.
    Useful for contraction-rate tests where kappa must be known.
    """
    s = np.asarray(singular_values, dtype=float)
    if s.shape != (cfg.r,) or (s <= 0).any() or (np.diff(s) > 0).any():
        raise ParameterError("singular_values must be positive, non-increasing, length r")
    b_star, _ = qr_decompose(rng.standard_normal((cfg.d, cfg.r)))
    v, _ = qr_decompose(rng.standard_normal((cfg.T, cfg.r)))
    return GroundTruth.from_factors(b_star, s[:, None] * v.T)


def sample_arm_set(cfg: ProblemConfig, rng: np.random.Generator) -> np.ndarray:
    """K i.i.d. N(arm_mean, I_d) feature vectors, one row per arm."""
    arms = rng.standard_normal((cfg.K, cfg.d))
    if cfg.arm_mean is not None:
        arms = arms + cfg.arm_mean
    return arms


def reward(phi, theta_star_t, noise_std: float, rng: np.random.Generator) -> float:
    """Observed reward <phi, theta_t> + N(0, noise_std^2)."""
    phi = np.asarray(phi, dtype=float)
    theta_star_t = np.asarray(theta_star_t, dtype=float)
    if phi.shape != theta_star_t.shape:
        raise ParameterError(f"shape mismatch: {phi.shape} vs {theta_star_t.shape}")
    value = float(phi @ theta_star_t)
    if noise_std > 0:
        value += noise_std * float(rng.standard_normal())
    return value


def synthetic_batches(truth: GroundTruth, n_per_task: int, noise_std: float, rng):
    """Static regression data: per task, n Gaussian feature rows and rewards.

    Returns a list of TaskBatch, one per column of Theta. This is the
    offline counterpart of one exploration epoch and is what the estimator
    tests and error-curve scripts feed on.
    """
    from .estimators import TaskBatch  # local import to avoid a cycle

    d, T = truth.Theta_star.shape
    batches = []
    for t in range(T):
        phi = rng.standard_normal((n_per_task, d))
        y = phi @ truth.Theta_star[:, t]
        if noise_std > 0:
            y = y + noise_std * rng.standard_normal(n_per_task)
        batches.append(TaskBatch(task_id=t, Phi=phi, y=y))
    return batches


class SyntheticEnvironment:
    """Interactive environment over a planted GroundTruth.

    Arm features and additive noise for the full horizon are pre-drawn from
    independent child streams at construction, so every algorithm run against
    the same environment sees identical arm sets and noise regardless of the
    actions it takes (arms are i.i.d., noise is per (round, task)).
    """

    def __init__(self, cfg: ProblemConfig, seed_seq: np.random.SeedSequence | None = None):
        if seed_seq is None:
            seed_seq = np.random.SeedSequence(cfg.seed)
        ss_truth, ss_arms, ss_noise = seed_seq.spawn(3)
        self.cfg = cfg
        self.ground_truth: GroundTruth | None = generate_ground_truth(cfg, rng_from(ss_truth))
        arms = rng_from(ss_arms).standard_normal((cfg.N, cfg.T, cfg.K, cfg.d))
        if cfg.arm_mean is not None:
            arms = arms + cfg.arm_mean
        self._arms = arms
        self._noise = rng_from(ss_noise).standard_normal((cfg.N, cfg.T)) * cfg.noise_std

    @property
    def N(self) -> int:
        return self.cfg.N

    @property
    def T(self) -> int:
        return self.cfg.T

    @property
    def K(self) -> int:
        return self.cfg.K

    @property
    def d(self) -> int:
        return self.cfg.d

    def arm_set(self, n: int, t: int) -> np.ndarray:
        """Feature matrix (K x d) offered to task t at round n."""
        return self._arms[n, t]

    def expected_rewards(self, n: int, t: int) -> np.ndarray:
        """Noise-free reward of every arm offered to task t at round n."""
        return self._arms[n, t] @ self.ground_truth.Theta_star[:, t]

    def observed_reward(self, n: int, t: int, k: int) -> float:
        """Expected reward of arm k plus this round's noise draw."""
        return float(self.expected_rewards(n, t)[k] + self._noise[n, t])
