"""Dynamic clustering of bandits.

Each user owns one up-to-date model holding the observations of its current
stationary period.  Every new observation is first tested for homogeneity
with that model; a sliding-window mean of the test outcomes above a
Hoeffding-style threshold retires the model (change detected) and starts a
fresh one.  After each interaction the user's neighborhood is rebuilt by
testing its model against every up-to-date and retired model, and arm
selection runs UCB on the pooled sufficient statistics of the neighborhood.
"""
from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import EmptyNeighborhood, NoCandidates, UnknownUser
from .homogeneity import Dataset, NoiseModel, one_sample_statistic, statistics_against
from .numerics import DEFAULT_REL_TOL, central_chi2_cdf, chi2_quantile, hoeffding_margin


@dataclass(frozen=True)
class DyCluConfig:
    """Learner hyperparameters.

    ``upsilon_e`` and ``upsilon_c`` default to the 95% quantiles of chi2(1)
    and chi2(d).  ``max_outdated`` caps the retired-model set (oldest dropped
    first); ``None`` keeps every retired model.
    """

    d: int
    sigma2: float
    tau: int = 30
    delta: float = 0.1
    delta_e: float = 0.01
    upsilon_e: Optional[float] = None
    upsilon_c: Optional[float] = None
    lam: float = 1.0
    max_outdated: Optional[int] = None
    rel_tol: float = DEFAULT_REL_TOL

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.tau < 1:
            raise ValueError("tau must be >= 1")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta!r}")
        # delta_e = 1 switches the Hoeffding margin off
        if not 0.0 < self.delta_e <= 1.0:
            raise ValueError(f"delta_e must lie in (0, 1], got {self.delta_e!r}")
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if not (self.sigma2 > 0 and math.isfinite(self.sigma2)):
            raise ValueError("sigma2 must be positive")
        if self.upsilon_e is None:
            object.__setattr__(self, "upsilon_e", chi2_quantile(0.95, 1))
        if self.upsilon_c is None:
            object.__setattr__(self, "upsilon_c", chi2_quantile(0.95, self.d))
        if self.max_outdated is not None and self.max_outdated < 0:
            raise ValueError("max_outdated must be >= 0")

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    @property
    def noise(self) -> NoiseModel:
        return NoiseModel(self.sigma2)


@dataclass
class StepEvent:
    observation_discarded: bool = False
    change_detected: bool = False
    model_updated: bool = False
    neighborhood_size: int = 1


_model_ids = itertools.count()


@dataclass(eq=False)
class UserModel:
    """One stationary period of one user."""

    owner: int
    data: Dataset
    window: deque
    created_at: int = 0
    retired_at: Optional[int] = None
    label: Optional[int] = None
    uid: int = field(default_factory=lambda: next(_model_ids))

    @classmethod
    def fresh(cls, owner: int, cfg: DyCluConfig, t: int = 0) -> "UserModel":
        return cls(owner, Dataset(cfg.d, cfg.rel_tol), deque(maxlen=cfg.tau), created_at=t)

    @property
    def e_mean(self) -> float:
        return sum(self.window) / len(self.window) if self.window else 0.0

    @property
    def A(self) -> np.ndarray:
        return self.data.A

    @property
    def b(self) -> np.ndarray:
        return self.data.b

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        state = "retired" if self.retired_at is not None else "live"
        return f"UserModel(owner={self.owner}, n={len(self.data)}, {state})"


class ModelPool:
    """Up-to-date models (one per user), retired models, and neighborhoods."""

    def __init__(self, n_users: int, cfg: DyCluConfig):
        self.cfg = cfg
        self.up_to_date = {u: UserModel.fresh(u, cfg) for u in range(n_users)}
        self.outdated: list[UserModel] = []
        self.neighborhoods = {u: [m] for u, m in self.up_to_date.items()}
        self.detections = 0

    def model(self, user: int) -> UserModel:
        try:
            return self.up_to_date[user]
        except KeyError:
            raise UnknownUser(user) from None

    def all_models(self):
        yield from self.up_to_date.values()
        yield from self.outdated

    def retire(self, user: int, t: int) -> UserModel:
        """Move the user's model to the outdated set and install a fresh one."""
        old = self.model(user)
        old.retired_at = t
        self.outdated.append(old)
        cap = self.cfg.max_outdated
        if cap is not None and len(self.outdated) > cap:
            del self.outdated[: len(self.outdated) - cap]
        new = UserModel.fresh(user, self.cfg, t)
        self.up_to_date[user] = new
        self.detections += 1
        return new


def detection_threshold(cfg: DyCluConfig) -> float:
    """Largest windowed rejection rate still consistent with no change."""
    return 1.0 - central_chi2_cdf(cfg.upsilon_e, 1) + hoeffding_margin(cfg.delta_e, cfg.tau)


def ucb_alpha(sigma: float, d: int, n_obs: int, lam: float, delta: float) -> float:
    """Confidence-width multiplier for a ridge estimate built from n_obs observations."""
    return sigma * math.sqrt(d * math.log(1.0 + n_obs / (d * lam)) + 2.0 * math.log(1.0 / delta)) \
        + math.sqrt(lam)


def ucb_scores(A: np.ndarray, b: np.ndarray, alpha: float, candidates: np.ndarray) -> np.ndarray:
    """x^T A^{-1} b + alpha * sqrt(x^T A^{-1} x) for every candidate row x."""
    theta = np.linalg.solve(A, b)
    ainv_x = np.linalg.solve(A, candidates.T)
    width = np.sqrt(np.maximum(np.einsum("ij,ji->i", candidates, ainv_x), 0.0))
    return candidates @ theta + alpha * width


def ucb_select(A, b, n_obs, candidates, sigma, lam, delta) -> int:
    """Index of the highest UCB score; ties go to the lowest index."""
    candidates = np.asarray(candidates, dtype=float)
    if candidates.ndim != 2 or len(candidates) == 0:
        raise NoCandidates("no candidate arms")
    alpha = ucb_alpha(sigma, A.shape[0], n_obs, lam, delta)
    return int(np.argmax(ucb_scores(A, b, alpha, candidates)))


def aggregate_statistics(neighborhood, cfg: DyCluConfig):
    """(lam I + sum A_j, sum b_j, sum |H_j|) over the neighborhood's models."""
    if not neighborhood:
        raise EmptyNeighborhood("cannot aggregate an empty neighborhood")
    A = cfg.lam * np.eye(cfg.d)
    b = np.zeros(cfg.d)
    n = 0
    for model in neighborhood:
        A = A + model.A
        b = b + model.b
        n += len(model)
    return A, b, n


def neighborhood_of(pool: ModelPool, user: int) -> list:
    if user not in pool.neighborhoods:
        raise UnknownUser(user)
    return pool.neighborhoods[user]


def select_arm(pool: ModelPool, user: int, candidates, cfg: DyCluConfig) -> int:
    """UCB arm choice from the statistics of the user's last computed neighborhood."""
    A, b, n = aggregate_statistics(neighborhood_of(pool, user), cfg)
    return ucb_select(A, b, n, candidates, cfg.sigma, cfg.lam, cfg.delta)


def update_neighborhood(pool: ModelPool, user: int, cfg: DyCluConfig) -> list:
    """Recompute the user's neighborhood among all live and retired models.

    Models with no data are never matched; an empty own model is its own
    neighborhood.
    """
    own = pool.model(user)
    neighborhood = [own]
    if own.data:
        others = [m for m in pool.all_models() if m is not own and m.data]
        if others:
            stats, _ = statistics_against(own.data, [m.data for m in others], cfg.noise)
            neighborhood.extend(m for m, s in zip(others, stats) if s <= cfg.upsilon_c)
    pool.neighborhoods[user] = neighborhood
    return neighborhood


def observe(pool: ModelPool, user: int, context, reward: float, cfg: DyCluConfig,
            t: int) -> StepEvent:
    """Feed one observation: detect change, update or retire, re-cluster."""
    model = pool.model(user)
    x = np.asarray(context, dtype=float)
    if model.data and np.any(x):
        stat, _ = one_sample_statistic(model.data, (x, reward), cfg.noise)
        e = int(stat > cfg.upsilon_e)
    else:
        e = 0
    model.window.append(e)
    event = StepEvent()
    if model.e_mean <= detection_threshold(cfg):
        if e == 0:
            model.data.append(x, reward)
            event.model_updated = True
        else:
            event.observation_discarded = True
    else:
        pool.retire(user, t)
        event.change_detected = True
    event.neighborhood_size = len(update_neighborhood(pool, user, cfg))
    return event


class DyClu:
    """Learner wrapper driving a :class:`ModelPool` from environment steps."""

    name = "dyclu"

    def __init__(self, cfg: DyCluConfig, n_users: int):
        self.cfg = cfg
        self.pool = ModelPool(n_users, cfg)
        self._threshold = detection_threshold(cfg)

    @property
    def detections(self) -> int:
        return self.pool.detections

    def select(self, step) -> int:
        return select_arm(self.pool, step.user, step.candidates, self.cfg)

    def update(self, step, chosen: int, reward: float) -> StepEvent:
        return observe(self.pool, step.user, step.candidates[chosen], reward, self.cfg, step.t)

    def neighborhood_of(self, user: int) -> list:
        return neighborhood_of(self.pool, user)


class OracleDyClu(DyClu):
    """DyClu with ground-truth change detection and clustering.

    A user's model is retired exactly when the environment switches that
    user's parameter, every observation is kept, and the neighborhood is the
    set of models labelled with the current true parameter.  With these
    oracles the learner aggregates the same observations as a per-parameter
    LinUCB and must choose the same arms.
    """

    name = "dyclu-oracle"

    def __init__(self, cfg: DyCluConfig, n_users: int):
        super().__init__(cfg, n_users)
        self._switched = False

    def select(self, step) -> int:
        k = step.true_param_index
        own = self.pool.model(step.user)
        self._switched = own.label is not None and own.label != k
        if self._switched:
            own = self.pool.retire(step.user, step.t)
        own.label = k
        neighborhood = [own] + [m for m in self.pool.all_models()
                                if m is not own and m.label == k and m.data]
        self.pool.neighborhoods[step.user] = neighborhood
        return select_arm(self.pool, step.user, step.candidates, self.cfg)

    def update(self, step, chosen: int, reward: float) -> StepEvent:
        # the observation opens the new model when a switch just happened
        self.pool.model(step.user).data.append(step.candidates[chosen], reward)
        return StepEvent(change_detected=self._switched, model_updated=not self._switched,
                         neighborhood_size=len(self.pool.neighborhoods[step.user]))
