"""Dense real-matrix primitives used by every estimator.

All functions are pure: they never mutate their arguments and hold no global
state. Matrices are plain float64 ``numpy`` arrays; orthonormal bases are
tall matrices ``B`` with ``B.T @ B = I`` to 1e-10 in max-norm.

QR and the triangular solve are delegated to LAPACK (via numpy/scipy) with a
sign convention fixed on top; the top-r singular subspace and the spectral
norm are computed by block subspace iteration / power iteration so their
iteration behavior is explicit and seedable.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
import scipy.linalg

from .errors import DegenerateInputError, ParameterError

__all__ = [
    "qr_decompose",
    "top_r_left_singular_vectors",
    "SubspaceResult",
    "least_squares",
    "subspace_error",
    "frobenius_norm",
    "spectral_norm",
]

# Relative threshold below which a diagonal entry of R flags rank deficiency.
_RANK_TOL = 1e-12
# Relative gap under which the top-r subspace is flagged as ill-defined.
_GAP_TOL = 1e-8


def _as_matrix(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise ParameterError(f"{name} must be a 2-d array, got ndim={a.ndim}")
    if not np.isfinite(a).all():
        raise ParameterError(f"{name} contains non-finite entries")
    return a


def qr_decompose(a) -> tuple[np.ndarray, np.ndarray]:
    """Thin QR factorization A = Q R with a fixed sign convention.

    Q has orthonormal columns and R is upper-triangular with nonnegative
    diagonal, which makes the factorization unique for full-column-rank A.

    Raises DegenerateInputError (naming the offending column) when a diagonal
    entry of R is below 1e-12 times the largest, i.e. the columns are
    numerically dependent.
    """
    a = _as_matrix(a, "a")
    m, n = a.shape
    if m < n:
        raise ParameterError(f"qr_decompose needs rows >= cols, got {m}x{n}")
    q, r = np.linalg.qr(a)
    diag = np.diagonal(r).copy()
    signs = np.where(diag < 0, -1.0, 1.0)
    q = q * signs
    r = signs[:, None] * r
    diag = np.abs(diag)
    dmax = diag.max(initial=0.0)
    bad = np.flatnonzero(diag <= _RANK_TOL * dmax) if dmax > 0 else np.arange(n)
    if bad.size:
        j = int(bad[0])
        raise DegenerateInputError(
            f"rank-deficient input: column {j} is numerically dependent "
            f"(|R[{j},{j}]| = {diag[j] if dmax > 0 else 0.0:.3e})",
            column=j,
        )
    return q, r


class SubspaceResult(NamedTuple):
    """Top-r left singular subspace estimate.

    ``gap_warning`` is set when the singular-value gap at rank r is below
    1 + 1e-8, in which case the subspace itself is ill-defined (the basis is
    still returned). ``singular_values`` holds the Ritz estimates for the
    iterated block (length r or r+1).
    """

    basis: np.ndarray
    gap_warning: bool
    singular_values: np.ndarray


def top_r_left_singular_vectors(a, r: int, iters: int = 100, rng=None) -> SubspaceResult:
    """Dominant r-dimensional left singular subspace of ``a``.

    Block subspace (power) iteration on A A^T with QR re-orthonormalization
    at every step, followed by a Rayleigh-Ritz rotation that aligns the block
    with individual singular directions and yields singular-value estimates.
    The start block is drawn from ``rng`` (a fresh Philox stream when omitted)
    so results are deterministic for a given stream.
    """
    a = _as_matrix(a, "a")
    m, n = a.shape
    if not 1 <= r <= min(m, n):
        raise ParameterError(f"r={r} must be in [1, min{a.shape}]")
    if iters < 1:
        raise ParameterError(f"iters={iters} must be >= 1")
    if rng is None:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(0)))

    block = min(r + 1, min(m, n))
    if not a.any():
        # Zero matrix: every subspace is equally (in)valid.
        return SubspaceResult(np.eye(m, r), True, np.zeros(block))

    q, _ = np.linalg.qr(rng.standard_normal((m, block)))
    for _ in range(iters):
        z = a @ (a.T @ q)
        q, _ = np.linalg.qr(z)
    # Rayleigh-Ritz: eigendecompose Q^T A A^T Q and rotate the block.
    s = a.T @ q
    evals, evecs = np.linalg.eigh(s.T @ s)
    order = np.argsort(evals)[::-1]
    svals = np.sqrt(np.clip(evals[order], 0.0, None))
    q = q @ evecs[:, order]

    if block > r:
        s_r, s_next = svals[r - 1], svals[r]
    else:
        s_r, s_next = svals[r - 1], 0.0
    if s_next > 0:
        gap_warning = s_r / s_next < 1.0 + _GAP_TOL
    else:
        gap_warning = s_r == 0.0
    return SubspaceResult(np.ascontiguousarray(q[:, :r]), bool(gap_warning), svals)


def least_squares(a, b) -> np.ndarray:
    """argmin_x ||A x - b||_2 for full-column-rank A, solved via thin QR.

    QR is preferred over the normal equations so conditioning is that of A,
    not A^T A. Rank deficiency raises DegenerateInputError.
    """
    a = _as_matrix(a, "a")
    b = np.asarray(b, dtype=float)
    if b.ndim != 1 or b.shape[0] != a.shape[0]:
        raise ParameterError(f"b must have shape ({a.shape[0]},), got {b.shape}")
    if not np.isfinite(b).all():
        raise ParameterError("b contains non-finite entries")
    q, r = qr_decompose(a)
    return scipy.linalg.solve_triangular(r, q.T @ b, lower=False)


def subspace_error(b1, b2) -> float:
    """Distance ||(I - B1 B1^T) B2||_F between equal-rank orthonormal bases.

    Evaluated as ||B2 - B1 (B1^T B2)||_F, which never forms the d x d
    projector (O(d r^2)) and, unlike the algebraically equal
    sqrt(r - ||B1^T B2||_F^2), has no cancellation floor near zero, so exact
    span matches read as ~1e-15 rather than ~sqrt(eps). Ranges over
    [0, sqrt(r)]; 0 iff the spans agree.
    """
    b1 = _as_matrix(b1, "b1")
    b2 = _as_matrix(b2, "b2")
    if b1.shape != b2.shape:
        raise ParameterError(f"basis shapes differ: {b1.shape} vs {b2.shape}")
    for name, b in (("b1", b1), ("b2", b2)):
        gram_err = np.abs(b.T @ b - np.eye(b.shape[1])).max()
        if gram_err > 1e-6:
            raise ParameterError(f"{name} is not orthonormal (max gram error {gram_err:.2e})")
    resid = b2 - b1 @ (b1.T @ b2)
    return float(min(np.linalg.norm(resid), np.sqrt(b1.shape[1])))


def frobenius_norm(a) -> float:
    a = _as_matrix(a, "a")
    return float(np.linalg.norm(a))


def spectral_norm(a, iters: int = 1000, tol: float = 1e-10) -> float:
    """Largest singular value, by power iteration on the smaller Gram matrix.

    Iterates v <- A^T A v with Rayleigh-quotient estimates until the estimate
    is stable to relative tolerance ``tol`` (or ``iters`` is exhausted).
    """
    a = _as_matrix(a, "a")
    if not a.any():
        return 0.0
    if a.shape[0] < a.shape[1]:
        a = a.T
    n = a.shape[1]
    v = np.full(n, 1.0 / np.sqrt(n))
    est = 0.0
    for _ in range(iters):
        w = a.T @ (a @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            # Started orthogonal to the row space; restart from the heaviest column.
            j = int(np.argmax(np.linalg.norm(a, axis=0)))
            v = np.zeros(n)
            v[j] = 1.0
            continue
        new_est = np.sqrt(max(float(v @ w), 0.0))
        v = w / nw
        if abs(new_est - est) <= tol * max(new_est, 1e-300):
            return float(new_est)
        est = new_est
    return float(est)
