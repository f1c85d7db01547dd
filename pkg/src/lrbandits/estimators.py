"""Parameter recovery for the shared low-rank reward matrix.

The main estimator alternates an exact per-task least-squares update of the
coefficient matrix W with a single projected gradient step on the shared
orthonormal basis B ("AltGDMin"). Truncated spectral initialization supplies
the starting basis; method-of-moments and plain alternating GD serve as
baselines.

Gradient convention: ``grad_b``/``grad_w`` implement
``sum_t Phi_t^T (Phi_t B w_t - y_t) w_t^T`` (and its W analogue), which is
half the derivative of the squared-error cost ``cost``. Step sizes here are
calibrated for that convention; finite-difference checks must difference
cost/2.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DegenerateInputError, DivergenceError, ParameterError
from .linalg import (
    SubspaceResult,
    least_squares,
    qr_decompose,
    spectral_norm,
    subspace_error,
    top_r_left_singular_vectors,
)

__all__ = [
    "TaskBatch",
    "SplitBatches",
    "FactorEstimate",
    "GdConfig",
    "GdDiagnostics",
    "sample_split",
    "no_split",
    "truncation_threshold",
    "SpectralInitResult",
    "spectral_init",
    "cost",
    "grad_b",
    "grad_w",
    "min_w",
    "altgdmin_epoch",
    "mom_estimate",
    "altgd_baseline",
]


@dataclass(eq=False)
class TaskBatch:
    """Stacked feature rows Phi (n x d) and rewards y (n,) for one task."""

    task_id: int
    Phi: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.Phi = np.asarray(self.Phi, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.Phi.ndim != 2 or self.y.ndim != 1 or self.Phi.shape[0] != self.y.shape[0]:
            raise ParameterError(
                f"task {self.task_id}: Phi {self.Phi.shape} and y {self.y.shape} are inconsistent"
            )
        if self.Phi.shape[0] < 1:
            raise ParameterError(f"task {self.task_id}: batch is empty")
        if not (np.isfinite(self.Phi).all() and np.isfinite(self.y).all()):
            raise ParameterError(f"task {self.task_id}: non-finite entries")

    @property
    def n(self) -> int:
        return self.Phi.shape[0]


@dataclass(eq=False)
class SplitBatches:
    """Disjoint contiguous row-range parts of a batch list.

    ``init_part`` feeds the spectral initialization (None when not reserved);
    ``gd_parts`` feed the W-updates and gradient steps, 2L parts when sample
    splitting is on, a single shared part when it is off.
    """

    init_part: list[TaskBatch] | None
    gd_parts: list[list[TaskBatch]]


@dataclass(eq=False)
class FactorEstimate:
    """Current estimate (B, W); column t of Theta = B @ W estimates theta_t."""

    B: np.ndarray
    W: np.ndarray

    @property
    def Theta(self) -> np.ndarray:
        return self.B @ self.W


@dataclass
class GdConfig:
    """Knobs for the alternating GD-and-minimization loop.

    L: iterations per epoch; c_gamma: step factor (the B step is
    c_gamma / sigma_max_hat^2, further divided by the per-part sample count);
    trunc_multiplier: multiplier on mean squared reward in the truncation
    threshold; sample_split: whether each iteration consumes its own disjoint
    data part (2L parts per epoch) or all parts reuse the full epoch.
    """

    L: int = 100
    c_gamma: float = 0.4
    trunc_multiplier: float = 9.0
    sample_split: bool = True

    def __post_init__(self):
        if self.L < 1:
            raise ParameterError("L must be >= 1")
        if not 0.0 <= self.c_gamma <= 0.5:
            raise ParameterError("c_gamma must be in [0, 0.5]")
        if self.trunc_multiplier <= 0:
            raise ParameterError("trunc_multiplier must be > 0")


def sample_split(batches: list[TaskBatch], parts: int, include_init: bool) -> SplitBatches:
    """Partition every task's rows into ``parts`` contiguous ranges.

    Sizes within a task differ by at most one row, with earlier parts taking
    the remainder. When ``include_init`` the first part is reserved for
    initialization and the rest become gd_parts.
    """
    if parts < 1:
        raise ParameterError("parts must be >= 1")
    if include_init and parts < 2:
        raise ParameterError("include_init needs parts >= 2")
    for b in batches:
        if b.n < parts:
            raise ParameterError(
                f"task {b.task_id}: {b.n} rows cannot be split into {parts} parts "
                f"(needs at least {parts} rows)"
            )
    per_part: list[list[TaskBatch]] = [[] for _ in range(parts)]
    for b in batches:
        base, rem = divmod(b.n, parts)
        start = 0
        for p in range(parts):
            size = base + (1 if p < rem else 0)
            per_part[p].append(
                TaskBatch(task_id=b.task_id, Phi=b.Phi[start : start + size], y=b.y[start : start + size])
            )
            start += size
    if include_init:
        return SplitBatches(init_part=per_part[0], gd_parts=per_part[1:])
    return SplitBatches(init_part=None, gd_parts=per_part)


def no_split(batches: list[TaskBatch]) -> SplitBatches:
    """Trivial split: the full batch is reused for every update."""
    return SplitBatches(init_part=None, gd_parts=[batches])


def truncation_threshold(batches: list[TaskBatch], trunc_multiplier: float) -> float:
    """alpha = multiplier times the mean squared reward over all samples."""
    total = 0.0
    count = 0
    for b in batches:
        total += float(b.y @ b.y)
        count += b.n
    if count == 0:
        raise ParameterError("cannot compute a truncation threshold from no samples")
    return trunc_multiplier * total / count


class SpectralInitResult(NamedTuple):
    basis: np.ndarray
    gap_warning: bool
    sigma_max_est: float


def spectral_init(batches: list[TaskBatch], alpha: float, r: int,
                  iters: int = 100, rng=None) -> SpectralInitResult:
    """Starting basis from the truncated reward-weighted feature moments.

    Column t of the moment matrix is (1/n_t) Phi_t^T (y_t masked to
    |y| <= sqrt(alpha)); the boundary point is kept. The basis is the top-r
    left singular subspace of that matrix, and ``sigma_max_est`` is its
    spectral norm (the estimator's stand-in for the unknown top singular
    value of the true matrix when sizing gradient steps).

    When sample splitting is active, ``alpha`` should come from a disjoint
    set of samples than ``batches``.
    """
    if not batches:
        raise ParameterError("spectral_init needs at least one task batch")
    if not alpha > 0:
        raise ParameterError(f"alpha must be > 0, got {alpha}")
    d = batches[0].Phi.shape[1]
    T = len(batches)
    if not 1 <= r <= min(d, T):
        raise ParameterError(f"r={r} must be in [1, min(d={d}, T={T})]")
    root = np.sqrt(alpha)
    theta0 = np.zeros((d, T))
    for t, b in enumerate(batches):
        masked = np.where(np.abs(b.y) <= root, b.y, 0.0)
        theta0[:, t] = b.Phi.T @ masked / b.n
    top = top_r_left_singular_vectors(theta0, r, iters=iters, rng=rng)
    return SpectralInitResult(top.basis, top.gap_warning, spectral_norm(theta0))


def _stack(batches: list[TaskBatch]):
    """(T, n, d) features and (T, n) rewards when all tasks share n, else None."""
    if len({b.n for b in batches}) == 1:
        return np.stack([b.Phi for b in batches]), np.stack([b.y for b in batches])
    return None, None


def cost(est: FactorEstimate, batches: list[TaskBatch], phi3=None, y2=None) -> float:
    """Squared-error fit sum_t ||y_t - Phi_t B w_t||^2."""
    if phi3 is None:
        phi3, y2 = _stack(batches)
    if phi3 is not None:
        resid = np.einsum("tnd,dt->tn", phi3, est.B @ est.W) - y2
        return float((resid * resid).sum())
    total = 0.0
    for t, b in enumerate(batches):
        resid = b.Phi @ (est.B @ est.W[:, t]) - b.y
        total += float(resid @ resid)
    return total


def grad_b(est: FactorEstimate, batches: list[TaskBatch], phi3=None, y2=None) -> np.ndarray:
    """Half-gradient of ``cost`` in B: sum_t Phi_t^T (Phi_t B w_t - y_t) w_t^T.

    Summation is in fixed task order (a single reduction over the stacked
    arrays when task sizes are uniform) for reproducibility.
    """
    if phi3 is None:
        phi3, y2 = _stack(batches)
    if phi3 is not None:
        resid = np.einsum("tnd,dt->tn", phi3, est.B @ est.W) - y2
        z = np.einsum("tnd,tn->td", phi3, resid)
        return z.T @ est.W.T
    d, r = est.B.shape
    g = np.zeros((d, r))
    for t, b in enumerate(batches):
        w_t = est.W[:, t]
        resid = b.Phi @ (est.B @ w_t) - b.y
        g += np.outer(b.Phi.T @ resid, w_t)
    return g


def grad_w(est: FactorEstimate, batches: list[TaskBatch]) -> np.ndarray:
    """Half-gradient of ``cost`` in W; column t is (Phi_t B)^T (Phi_t B w_t - y_t)."""
    phi3, y2 = _stack(batches)
    if phi3 is not None:
        pb = phi3 @ est.B
        resid = np.einsum("tnr,rt->tn", pb, est.W) - y2
        return np.einsum("tnr,tn->tr", pb, resid).T
    g = np.zeros_like(est.W)
    for t, b in enumerate(batches):
        pb = b.Phi @ est.B
        g[:, t] = pb.T @ (pb @ est.W[:, t] - b.y)
    return g


def _min_w_stacked(a3: np.ndarray, y2: np.ndarray, batches: list[TaskBatch]) -> np.ndarray:
    """Batched thin-QR least squares over the task axis; (r, T) result."""
    q, r = np.linalg.qr(a3)
    diag = np.abs(np.diagonal(r, axis1=-2, axis2=-1))
    dmax = diag.max(axis=1)
    bad = diag <= 1e-12 * dmax[:, None]  # dmax == 0 flags every column
    if bad.any():
        t, j = map(int, np.argwhere(bad)[0])
        raise DegenerateInputError(
            f"task {batches[t].task_id}: projected design is rank-deficient at column {j}",
            column=j,
            task=batches[t].task_id,
        )
    qty = np.einsum("tnr,tn->tr", q, y2)
    return np.linalg.solve(r, qty[:, :, None])[:, :, 0].T


def min_w(B: np.ndarray, batches: list[TaskBatch]) -> np.ndarray:
    """Exact minimizer of ``cost`` over W for fixed B: per-task least squares.

    Each column solves its own task independently; results do not depend on
    task order beyond the column they land in.
    """
    phi3, y2 = _stack(batches)
    if phi3 is not None:
        return _min_w_stacked(phi3 @ B, y2, batches)
    r = B.shape[1]
    W = np.zeros((r, len(batches)))
    for t, b in enumerate(batches):
        try:
            W[:, t] = least_squares(b.Phi @ B, b.y)
        except DegenerateInputError as e:
            raise DegenerateInputError(
                f"task {b.task_id}: projected design is rank-deficient ({e})",
                column=e.column,
                task=b.task_id,
            ) from e
    return W


@dataclass
class GdDiagnostics:
    """Per-iteration trace of one GD-minimization run.

    ``se`` is populated against ``ref_basis`` and ``err_theta`` against
    ``ref_theta`` when those references are supplied; ``fit`` is the data
    cost after each W-update.
    """

    gamma: float = 0.0
    se: list[float] = field(default_factory=list)
    err_theta: list[float] = field(default_factory=list)
    fit: list[float] = field(default_factory=list)


def _mean_rows(batches: list[TaskBatch]) -> float:
    return float(np.mean([b.n for b in batches]))


def altgdmin_epoch(B_in: np.ndarray, split: SplitBatches, gd: GdConfig, *,
                   sigma_max_hat: float, ref_basis=None, ref_theta=None
                   ) -> tuple[FactorEstimate, GdDiagnostics]:
    """L iterations of exact-min over W plus one projected GD step on B.

    Iteration l takes its W-update data from part l and its gradient data
    from part L+l when sample splitting is on (requiring exactly 2L
    gd_parts); with splitting off a single part is reused throughout. The B
    step is B - (c_gamma / sigma_max_hat^2 / n_part) * grad, followed by QR
    re-orthonormalization.
    """
    if sigma_max_hat <= 0 or not np.isfinite(sigma_max_hat):
        raise ParameterError(f"sigma_max_hat must be positive and finite, got {sigma_max_hat}")
    if gd.sample_split:
        if len(split.gd_parts) != 2 * gd.L:
            raise ParameterError(
                f"sample splitting needs 2L={2 * gd.L} parts, got {len(split.gd_parts)}"
            )
    elif len(split.gd_parts) != 1:
        raise ParameterError("without sample splitting supply exactly one shared part")

    # Stack each part once so the inner loop runs on batched arrays.
    stacked = [(_stack(p), p) for p in split.gd_parts]

    gamma = gd.c_gamma / sigma_max_hat**2
    diag = GdDiagnostics(gamma=gamma)
    B = B_in
    W = None
    for l in range(1, gd.L + 1):
        (wphi, wy), wdata = stacked[l - 1] if gd.sample_split else stacked[0]
        if wphi is not None:
            W = _min_w_stacked(wphi @ B, wy, wdata)
        else:
            W = min_w(B, wdata)
        diag.fit.append(cost(FactorEstimate(B, W), wdata, wphi, wy))
        (gphi, gy), gdata = stacked[gd.L + l - 1] if gd.sample_split else stacked[0]
        g = grad_b(FactorEstimate(B, W), gdata, gphi, gy)
        if not np.isfinite(g).all():
            raise DivergenceError(f"non-finite gradient at iteration {l}", iteration=l)
        B_plus = B - (gamma / _mean_rows(gdata)) * g
        B, _ = qr_decompose(B_plus)
        if ref_basis is not None:
            diag.se.append(subspace_error(B, ref_basis))
        if ref_theta is not None:
            diag.err_theta.append(
                float(np.linalg.norm(B @ W - ref_theta) / np.linalg.norm(ref_theta))
            )
    return FactorEstimate(B, W), diag


def mom_estimate(batches: list[TaskBatch], r: int, iters: int = 100, rng=None
                 ) -> tuple[FactorEstimate, bool]:
    """Method-of-moments baseline.

    B is the top-r eigenbasis of the squared-reward-weighted feature second
    moment (1/n_total) sum y^2 phi phi^T, W the least-squares fill-in.
    Returns the estimate and the degenerate-gap flag from the eigen step.
    """
    if not batches:
        raise ParameterError("mom_estimate needs at least one task batch")
    d = batches[0].Phi.shape[1]
    moment = np.zeros((d, d))
    count = 0
    for b in batches:
        moment += (b.Phi * (b.y**2)[:, None]).T @ b.Phi
        count += b.n
    moment /= count
    moment = (moment + moment.T) / 2.0
    top = top_r_left_singular_vectors(moment, r, iters=iters, rng=rng)
    return FactorEstimate(top.basis, min_w(top.basis, batches)), top.gap_warning


def altgd_baseline(B_in: np.ndarray, W_in: np.ndarray, batches: list[TaskBatch],
                   step: float, iters: int, *, sigma_max_hat: float | None = None,
                   ref_basis=None, ref_theta=None) -> tuple[FactorEstimate, GdDiagnostics]:
    """Plain alternating gradient descent on W and B (projected via QR).

    Classical factored GD: one shared step size
    ``step / sigma_max_hat^2 / n`` drives the gradient updates of both
    factors against the full batch, with B re-orthonormalized by QR after
    its step. Exactly minimizing nothing, it trades per-iteration progress
    for simplicity and serves as the reference the exact-min variant is
    compared against.
    """
    if sigma_max_hat is None:
        sigma_max_hat = spectral_norm(B_in @ W_in)
    if sigma_max_hat <= 0 or not np.isfinite(sigma_max_hat):
        raise ParameterError(f"sigma_max_hat must be positive and finite, got {sigma_max_hat}")
    n = _mean_rows(batches)
    gamma_b = step / sigma_max_hat**2 / n
    gamma_w = gamma_b
    B, W = B_in, np.asarray(W_in, dtype=float)
    diag = GdDiagnostics(gamma=gamma_b)
    for l in range(1, iters + 1):
        est = FactorEstimate(B, W)
        gw = grad_w(est, batches)
        if not np.isfinite(gw).all():
            raise DivergenceError(f"non-finite W-gradient at iteration {l}", iteration=l)
        W = W - gamma_w * gw
        gb = grad_b(FactorEstimate(B, W), batches)
        if not np.isfinite(gb).all():
            raise DivergenceError(f"non-finite B-gradient at iteration {l}", iteration=l)
        B, _ = qr_decompose(B - gamma_b * gb)
        diag.fit.append(cost(FactorEstimate(B, W), batches))
        if ref_basis is not None:
            diag.se.append(subspace_error(B, ref_basis))
        if ref_theta is not None:
            diag.err_theta.append(
                float(np.linalg.norm(B @ W - ref_theta) / np.linalg.norm(ref_theta))
            )
    return FactorEstimate(B, W), diag
