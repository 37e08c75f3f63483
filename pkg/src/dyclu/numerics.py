"""Linear-algebra and chi-square kernels behind the homogeneity test.

All routines are pure functions.  Matrix routines accept stacks of matrices
(arrays of shape ``(..., m, n)``) so the learner can test many model pairs in
one call.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import gammainc

from .errors import (
    InvalidDegreesOfFreedom,
    InvalidMatrix,
    InvalidNoncentrality,
    InvalidProbability,
    InvalidWindow,
)

#: Default relative cutoff on singular values for rank and pseudo-inverse.
DEFAULT_REL_TOL = 1e-10

#: Noncentral CDF series stops once the remaining Poisson mass is below this.
POISSON_TAIL = 1e-12


def _as_finite(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise InvalidMatrix("matrix has non-finite entries")
    return M


def _check_tol(rel_tol: float) -> float:
    if not rel_tol > 0:
        raise InvalidMatrix(f"rel_tol must be positive, got {rel_tol!r}")
    return float(rel_tol)


def pseudo_inverse(M, rel_tol: float = DEFAULT_REL_TOL) -> np.ndarray:
    """Moore-Penrose inverse via the SVD.

    Singular values ``s <= rel_tol * s.max()`` are treated as zero, so the
    zero matrix maps to the zero matrix.  Works on stacks.
    """
    M = _as_finite(M)
    rel_tol = _check_tol(rel_tol)
    if M.ndim < 2:
        raise InvalidMatrix("expected a matrix")
    if M.size == 0:
        return np.zeros(M.shape[:-2] + (M.shape[-1], M.shape[-2]))
    u, s, vt = np.linalg.svd(M, full_matrices=False)
    cutoff = rel_tol * s.max(axis=-1, keepdims=True)
    keep = s > cutoff
    s_inv = np.divide(1.0, s, out=np.zeros_like(s), where=keep)
    return np.matmul(np.swapaxes(vt, -1, -2) * s_inv[..., None, :], np.swapaxes(u, -1, -2))


def numerical_rank(M, rel_tol: float = DEFAULT_REL_TOL):
    """Number of singular values above ``rel_tol * s.max()``; 0 for the zero matrix."""
    M = _as_finite(M)
    rel_tol = _check_tol(rel_tol)
    if M.ndim < 2:
        raise InvalidMatrix("expected a matrix")
    if M.size == 0:
        return np.zeros(M.shape[:-2], dtype=int) if M.ndim > 2 else 0
    s = np.linalg.svd(M, compute_uv=False)
    return _rank_from_singular_values(s, rel_tol)


def _rank_from_singular_values(s: np.ndarray, rel_tol: float):
    smax = s.max(axis=-1, keepdims=True)
    rank = np.sum((s > rel_tol * smax) & (smax > 0), axis=-1)
    return int(rank) if np.ndim(rank) == 0 else rank


def min_eigenvalue(M) -> float:
    """Smallest eigenvalue of a symmetric PSD matrix, clipped at zero when within -1e-9."""
    M = _as_finite(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InvalidMatrix("expected a square matrix")
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    if np.max(np.abs(M - M.T), initial=0.0) > 1e-9 * scale:
        raise InvalidMatrix("matrix is not symmetric")
    lam = float(np.linalg.eigvalsh(M)[0])
    if -1e-9 <= lam < 0.0:
        lam = 0.0
    return lam


def _check_df(df) -> int:
    if int(df) != df or df < 1:
        raise InvalidDegreesOfFreedom(f"degrees of freedom must be a positive integer, got {df!r}")
    return int(df)


def central_chi2_cdf(x: float, df: int) -> float:
    """P(Q <= x) for Q ~ chi2(df), via the regularized lower incomplete gamma."""
    df = _check_df(df)
    if not math.isfinite(x):
        raise ValueError(f"x must be finite, got {x!r}")
    if x <= 0:
        return 0.0
    return min(1.0, max(0.0, float(gammainc(df / 2.0, x / 2.0))))


def noncentral_chi2_cdf(x: float, df: int, psi: float) -> float:
    """CDF of the noncentral chi-square as a Poisson mixture of central CDFs.

    F(x; df, psi) = sum_j Pois(j; psi/2) * F(x; df + 2j, 0).  Terms are summed
    outward from the Poisson mode so large ``psi`` does not underflow, and the
    series stops once the unvisited Poisson mass drops below 1e-12.
    """
    df = _check_df(df)
    if not psi >= 0 or not math.isfinite(psi):
        raise InvalidNoncentrality(f"noncentrality must be finite and >= 0, got {psi!r}")
    if not math.isfinite(x):
        raise ValueError(f"x must be finite, got {x!r}")
    if x <= 0:
        return 0.0
    half = psi / 2.0
    if half == 0.0:
        return central_chi2_cdf(x, df)

    log_half = math.log(half)

    def weight(j):
        return math.exp(-half + j * log_half - math.lgamma(j + 1))

    mode = int(math.floor(half))
    total = 0.0
    # Below the mode w_{j-1} = w_j * j / half, so the lower tail under j is at
    # most w_j * r / (1 - r) with r = j / half; symmetrically above the mode.
    j = mode
    while j >= 0:
        w = weight(j)
        total += w * gammainc(df / 2.0 + j, x / 2.0)
        r = j / half
        if j < mode and w * r / (1.0 - r) < POISSON_TAIL / 2:
            break
        j -= 1
    j = mode + 1
    while True:
        w = weight(j)
        total += w * gammainc(df / 2.0 + j, x / 2.0)
        r = half / (j + 1)
        if w * r / (1.0 - r) < POISSON_TAIL / 2:
            break
        j += 1
    return min(1.0, max(0.0, float(total)))


def chi2_quantile(p: float, df: int) -> float:
    """Inverse of :func:`central_chi2_cdf` by bracketing bisection."""
    if not 0.0 < p < 1.0:
        raise InvalidProbability(f"p must lie in (0, 1), got {p!r}")
    df = _check_df(df)
    lo, hi = 0.0, max(1.0, float(df))
    while central_chi2_cdf(hi, df) < p:
        lo, hi = hi, 2.0 * hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if central_chi2_cdf(mid, df) < p:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-14 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


def hoeffding_margin(delta_e: float, tau: int) -> float:
    """Deviation sqrt(log(1/delta_e) / (2 tau)) of a tau-sample mean of [0,1] variables."""
    if tau < 1:
        raise InvalidWindow(f"window size must be >= 1, got {tau!r}")
    if not 0.0 < delta_e <= 1.0:
        raise InvalidProbability(f"delta_e must lie in (0, 1], got {delta_e!r}")
    return math.sqrt(math.log(1.0 / delta_e) / (2.0 * tau))


def min_eig_lower_bound(n_obs: int, lambda_prime: float, d: int, delta_prime: float) -> float:
    """High-probability lower bound on lambda_min of n_obs i.i.d. context outer products.

    Returns (lambda'/4) n - 8 (L + sqrt(n L)) with L = log(d n / delta').
    Negative values are returned unchanged and mean the bound is vacuous.
    """
    if n_obs < 1:
        raise ValueError("n_obs must be >= 1")
    if not lambda_prime > 0:
        raise ValueError("lambda_prime must be positive")
    if not 0.0 < delta_prime < 1.0:
        raise InvalidProbability(f"delta_prime must lie in (0, 1), got {delta_prime!r}")
    log_term = math.log(d * n_obs / delta_prime)
    return lambda_prime / 4.0 * n_obs - 8.0 * (log_term + math.sqrt(n_obs * log_term))
