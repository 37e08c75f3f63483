"""Chi-square test of homogeneity between two sets of linear-Gaussian observations.

Given datasets H1 = (X1, y1) and H2 = (X2, y2), the statistic is

    s = (||X1 (v1 - v12)||^2 + ||X2 (v2 - v12)||^2) / sigma^2

where v1, v2, v12 are minimum-norm least-squares estimates on H1, H2 and
on the pooled data.  Under a common parameter s ~ chi2(df) with
df = rank(X1) + rank(X2) - rank([X1; X2]); otherwise s is noncentral.

Each :class:`Dataset` keeps an upper-triangular factor F of [X | y]
(F^T F = [X | y]^T [X | y]) updated one row at a time.  The singular values
of F's leading block equal those of X, so ranks are decided on the scale of X
rather than X^T X, and the pooled factor of two datasets is the QR factor of
their stacked factors.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateObservation, EmptyDataset, InvalidGap
from .numerics import (
    DEFAULT_REL_TOL,
    central_chi2_cdf,
    noncentral_chi2_cdf,
    numerical_rank,
    pseudo_inverse,
)

NORM_SLACK = 1e-9


@dataclass(frozen=True)
class NoiseModel:
    """Known reward-noise variance."""

    sigma2: float

    def __post_init__(self):
        if not (math.isfinite(self.sigma2) and self.sigma2 > 0):
            raise ValueError(f"sigma2 must be finite and positive, got {self.sigma2!r}")

    @classmethod
    def from_sigma(cls, sigma: float) -> "NoiseModel":
        return cls(float(sigma) ** 2)

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)


@dataclass(frozen=True)
class TestResult:
    statistic: float
    df: int
    threshold: float

    # keep pytest from collecting this as a test class
    __test__ = False

    @property
    def reject(self) -> bool:
        return self.statistic > self.threshold


class Dataset:
    """Ordered (context, reward) observations with cached sufficient statistics.

    ``A`` and ``b`` are the exact running sums of x x^T and x y.  Append is the
    only mutation.
    """

    def __init__(self, d: int, rel_tol: float = DEFAULT_REL_TOL):
        if d < 1:
            raise ValueError("dimension must be >= 1")
        self.d = int(d)
        self.rel_tol = rel_tol
        self._contexts: list[np.ndarray] = []
        self._rewards: list[float] = []
        self.A = np.zeros((d, d))
        self.b = np.zeros(d)
        self._factor = np.zeros((d + 1, d + 1))
        self._theta = None
        self._rank = None
        self._sv = None

    @classmethod
    def from_arrays(cls, X, y, rel_tol: float = DEFAULT_REL_TOL) -> "Dataset":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float).reshape(-1)
        ds = cls(X.shape[1], rel_tol)
        for x, r in zip(X, y):
            ds.append(x, r)
        return ds

    def __len__(self) -> int:
        return len(self._rewards)

    def __bool__(self) -> bool:
        return bool(self._rewards)

    def __repr__(self) -> str:
        return f"Dataset(d={self.d}, n={len(self)})"

    def append(self, x, y: float) -> None:
        x = np.asarray(x, dtype=float).reshape(-1)
        y = float(y)
        if x.shape != (self.d,):
            raise ValueError(f"context has shape {x.shape}, expected ({self.d},)")
        if not (np.all(np.isfinite(x)) and math.isfinite(y)):
            raise ValueError("observation must be finite")
        if np.linalg.norm(x) > 1.0 + NORM_SLACK:
            raise ValueError("context norm exceeds 1")
        self._contexts.append(x.copy())
        self._rewards.append(y)
        self.A += np.outer(x, x)
        self.b += x * y
        row = np.append(x, y)[None, :]
        self._factor = np.linalg.qr(np.vstack([self._factor, row]), mode="r")
        self._theta = None
        self._rank = None
        self._sv = None

    @property
    def X(self) -> np.ndarray:
        if not self._contexts:
            return np.zeros((0, self.d))
        return np.array(self._contexts)

    @property
    def y(self) -> np.ndarray:
        return np.array(self._rewards)

    @property
    def factor(self) -> np.ndarray:
        """(d+1) x (d+1) upper-triangular factor of [X | y]."""
        return self._factor

    def _solve(self):
        theta, rank, s = _solve_factor(self._factor, self.d, self.rel_tol)
        self._theta = theta
        self._rank = int(rank)
        self._sv = (float(s[-1]), float(s[0]))

    @property
    def theta(self) -> np.ndarray:
        """Minimum-norm least-squares estimate (the MLE under Gaussian noise)."""
        if self._theta is None:
            self._solve()
        return self._theta

    @property
    def rank(self) -> int:
        if self._rank is None:
            self._solve()
        return self._rank

    @property
    def singular_range(self) -> tuple[float, float]:
        """Smallest and largest singular value of X."""
        if self._sv is None:
            self._solve()
        return self._sv

    def fingerprint(self) -> str:
        """SHA-256 over the raw observations, for immutability audits."""
        h = hashlib.sha256()
        h.update(self.X.tobytes())
        h.update(self.y.tobytes())
        return h.hexdigest()


def mle(D: Dataset) -> np.ndarray:
    """Minimum-norm least-squares parameter estimate on a nonempty dataset."""
    if not D:
        raise EmptyDataset("MLE of an empty dataset")
    return D.theta.copy()


def _solve_factor(F, d, rel_tol):
    """Minimum-norm solution, rank and singular values from (stacks of) factors of [X | y]."""
    R = F[..., :d, :d]
    z = F[..., :d, d]
    u, s, vt = np.linalg.svd(R)
    smax = s[..., :1]
    keep = (s > rel_tol * smax) & (smax > 0)
    s_inv = np.divide(1.0, s, out=np.zeros_like(s), where=keep)
    uz = np.einsum("...ji,...j->...i", u, z)
    theta = np.einsum("...ji,...j->...i", vt, s_inv * uz)
    return theta, keep.sum(axis=-1), s


def _pooled_terms(F1, theta1, rank1, F2, theta2, rank2, d, rel_tol, sv1=None):
    """Vectorized statistic numerator and df for stacks of factor pairs.

    ``sv1`` (smallest, largest singular value of a first member shared by all
    pairs) enables a shortcut: stacking rows cannot shrink the smallest
    singular value and raises the largest to at most sqrt(smax1^2 + ||R2||_F^2),
    so when smin1 clears the rank cutoff against that bound the pooled design
    has full rank and its pseudo-inverse is the inverse.
    """
    Fp = np.linalg.qr(np.concatenate([F1, F2], axis=-2), mode="r")
    full = np.zeros(Fp.shape[:-2], dtype=bool)
    if sv1 is not None:
        smin1, smax1 = sv1
        r2 = np.sum(F2[..., :d, :d] ** 2, axis=(-2, -1))
        full = smin1 > rel_tol * np.sqrt(smax1 * smax1 + r2)
    theta_p = np.empty(Fp.shape[:-2] + (d,))
    rank_p = np.full(Fp.shape[:-2], d)
    if full.any():
        theta_p[full] = np.linalg.solve(Fp[full][:, :d, :d], Fp[full][:, :d, d:]).squeeze(-1)
    if not full.all():
        rest = ~full
        theta_p[rest], rank_p[rest], _ = _solve_factor(Fp[rest], d, rel_tol)
    r1 = np.einsum("...ij,...j->...i", F1[..., :d, :d], theta1 - theta_p)
    r2 = np.einsum("...ij,...j->...i", F2[..., :d, :d], theta2 - theta_p)
    numerator = np.sum(r1 * r1, axis=-1) + np.sum(r2 * r2, axis=-1)
    df = rank1 + rank2 - rank_p
    return numerator, df


def statistics_against(D: Dataset, others, noise: NoiseModel):
    """Statistic and df of ``D`` against each dataset in ``others`` in one batch.

    Returns two arrays aligned with ``others``.  All datasets must be nonempty.
    """
    others = list(others)
    if not D or not all(others):
        raise EmptyDataset("homogeneity test needs nonempty datasets")
    if not others:
        return np.zeros(0), np.zeros(0, dtype=int)
    d = D.d
    F2 = np.stack([o.factor for o in others])
    theta2 = np.stack([o.theta for o in others])
    rank2 = np.array([o.rank for o in others])
    F1 = np.broadcast_to(D.factor, F2.shape)
    theta1 = np.broadcast_to(D.theta, theta2.shape)
    numerator, df = _pooled_terms(F1, theta1, D.rank, F2, theta2, rank2, d, D.rel_tol,
                                  D.singular_range)
    stat = numerator / noise.sigma2
    stat = np.where(stat < 0.0, 0.0, stat)
    return stat, df.astype(int)


def _design_factors(X, y):
    """(d+1)-row factors of [X | y] for a stack of designs of shape (..., n, d)."""
    d = X.shape[-1]
    Z = np.concatenate([X, y[..., None]], axis=-1)
    F = np.linalg.qr(Z, mode="r")
    pad = d + 1 - F.shape[-2]
    if pad > 0:
        F = np.concatenate([F, np.zeros(F.shape[:-2] + (pad, d + 1))], axis=-2)
    return F


def batch_statistics(X1, y1, X2, y2, noise: NoiseModel, rel_tol: float = DEFAULT_REL_TOL):
    """Statistic and df for many dataset pairs at once.

    ``X1`` has shape (..., n1, d) and ``y1`` (..., n1), likewise for the second
    member of each pair; leading axes broadcast.  Returns arrays over the
    leading axes.  Same computation as :func:`homogeneity_statistic`.
    """
    X1, X2 = np.asarray(X1, dtype=float), np.asarray(X2, dtype=float)
    y1, y2 = np.asarray(y1, dtype=float), np.asarray(y2, dtype=float)
    if X1.shape[-2] == 0 or X2.shape[-2] == 0:
        raise EmptyDataset("homogeneity test needs nonempty datasets")
    d = X1.shape[-1]
    F1, F2 = _design_factors(X1, y1), _design_factors(X2, y2)
    F1, F2 = np.broadcast_arrays(F1, F2)
    theta1, rank1, _ = _solve_factor(F1, d, rel_tol)
    theta2, rank2, _ = _solve_factor(F2, d, rel_tol)
    numerator, df = _pooled_terms(F1, theta1, rank1, F2, theta2, rank2, d, rel_tol)
    stat = np.maximum(numerator / noise.sigma2, 0.0)
    return stat, df.astype(int)


def homogeneity_statistic(D1: Dataset, D2: Dataset, noise: NoiseModel) -> tuple[float, int]:
    """Chi-square homogeneity statistic between two datasets and its df."""
    if not D1 or not D2:
        raise EmptyDataset("homogeneity test needs nonempty datasets")
    if D1.d != D2.d:
        raise ValueError("datasets have different dimensions")
    # Ordering the pair canonically makes the float result exactly symmetric.
    if _order_key(D2) < _order_key(D1):
        D1, D2 = D2, D1
    stat, df = statistics_against(D1, [D2], noise)
    return float(stat[0]), int(df[0])


def _order_key(D: Dataset):
    return (len(D), D.factor.tobytes())


def homogeneity_test(D1: Dataset, D2: Dataset, noise: NoiseModel, threshold: float) -> TestResult:
    stat, df = homogeneity_statistic(D1, D2, noise)
    return TestResult(stat, df, float(threshold))


def one_sample_statistic(D: Dataset, obs, noise: NoiseModel) -> tuple[float, int]:
    """Homogeneity of a single new observation with an existing dataset."""
    x, y = obs
    x = np.asarray(x, dtype=float).reshape(-1)
    if not D:
        raise EmptyDataset("one-sample test against an empty dataset")
    if not np.any(x):
        raise DegenerateObservation("zero context carries no information")
    single = Dataset(D.d, D.rel_tol)
    single.append(x, y)
    stat, df = statistics_against(D, [single], noise)
    return float(stat[0]), int(df[0])


def statistic_from_observations(X1, y1, X2, y2, sigma2: float, rel_tol: float = DEFAULT_REL_TOL):
    """Reference evaluation straight from raw design matrices.

    Uses generalized inverses of the Gram matrices and SVD ranks of the raw
    designs; slow, but shares no code path with :func:`homogeneity_statistic`.
    """
    X1, X2 = np.atleast_2d(X1), np.atleast_2d(X2)
    y1, y2 = np.asarray(y1, float), np.asarray(y2, float)
    Xp = np.vstack([X1, X2])
    yp = np.concatenate([y1, y2])

    def fit(X, y):
        return pseudo_inverse(X.T @ X, rel_tol) @ (X.T @ y)

    t1, t2, tp = fit(X1, y1), fit(X2, y2), fit(Xp, yp)
    stat = (np.sum((X1 @ (t1 - tp)) ** 2) + np.sum((X2 @ (t2 - tp)) ** 2)) / sigma2
    df = numerical_rank(X1, rel_tol) + numerical_rank(X2, rel_tol) - numerical_rank(Xp, rel_tol)
    return max(float(stat), 0.0), int(df)


def noncentrality(X1, X2, theta1, theta2, sigma2: float, rel_tol: float = DEFAULT_REL_TOL) -> float:
    """Exact noncentrality of the statistic's distribution for known parameters."""
    X1, X2 = np.atleast_2d(X1), np.atleast_2d(X2)
    Xp = np.vstack([X1, X2])
    mean = np.concatenate([X1 @ theta1, X2 @ theta2])
    proj = Xp @ pseudo_inverse(Xp.T @ Xp, rel_tol) @ Xp.T
    resid = mean - proj @ mean
    return float(max(resid @ resid, 0.0) / sigma2)


def type1_bound(upsilon: float, df: int) -> float:
    """Upper bound on P(reject) when both datasets share one parameter."""
    return 1.0 - central_chi2_cdf(upsilon, df)


def type2_bound(upsilon: float, d: int, lmin1: float, lmin2: float, gap: float,
                noise: NoiseModel) -> float:
    """Upper bound on P(accept) when the parameters differ by ``gap`` in norm.

    ``lmin1``/``lmin2`` are the smallest eigenvalues of X1^T X1 and X2^T X2.
    With a rank-deficient design the bound degrades to F(upsilon; d, 0).
    """
    if not gap > 0:
        raise InvalidGap(f"gap must be positive, got {gap!r}")
    if lmin1 > 0 and lmin2 > 0:
        psi = (gap * gap / noise.sigma2) / (1.0 / lmin1 + 1.0 / lmin2)
        return noncentral_chi2_cdf(upsilon, d, psi)
    return central_chi2_cdf(upsilon, d)
