"""Comparison learners.

All learners share one interface: ``select(step) -> index`` followed by
``update(step, chosen, reward) -> StepEvent``.  Arm scores use the same UCB
width as DyClu so that differences come only from which observations are
pooled.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .core import StepEvent, detection_threshold, DyCluConfig, ucb_select
from .errors import UnknownParameter, UnknownUser
from .homogeneity import Dataset, one_sample_statistic


@dataclass(frozen=True)
class UCBConfig:
    d: int
    sigma2: float
    lam: float = 1.0
    delta: float = 0.1

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)


class RidgeModel:
    """A = lam I + sum x x^T, b = sum x y."""

    def __init__(self, d: int, lam: float = 1.0):
        self.lam = lam
        self.A = lam * np.eye(d)
        self.b = np.zeros(d)
        self.n_obs = 0

    @property
    def theta(self) -> np.ndarray:
        return np.linalg.solve(self.A, self.b)

    def update(self, x, y: float) -> None:
        x = np.asarray(x, dtype=float)
        self.A += np.outer(x, x)
        self.b += x * y
        self.n_obs += 1

    def reset(self) -> None:
        d = len(self.b)
        self.A = self.lam * np.eye(d)
        self.b = np.zeros(d)
        self.n_obs = 0


def linucb_select(model: RidgeModel, candidates, cfg: UCBConfig) -> int:
    return ucb_select(model.A, model.b, model.n_obs, candidates, cfg.sigma, cfg.lam, cfg.delta)


def linucb_step(model: RidgeModel, candidates, feedback, cfg: UCBConfig) -> tuple[int, float]:
    """Choose with UCB, ask ``feedback(index)`` for the reward, update in place."""
    chosen = linucb_select(model, candidates, cfg)
    reward = feedback(chosen)
    model.update(np.asarray(candidates)[chosen], reward)
    return chosen, reward


class LinUCB:
    """LinUCB with one model shared by all users (``"one"``) or one per user (``"ind"``)."""

    def __init__(self, cfg: UCBConfig, n_users: int, variant: str = "ind"):
        if variant not in ("one", "ind"):
            raise ValueError(f"unknown LinUCB variant {variant!r}")
        self.cfg = cfg
        self.variant = variant
        self.name = f"linucb-{variant}"
        self.models = [RidgeModel(cfg.d, cfg.lam) for _ in range(1 if variant == "one" else n_users)]
        self.detections = 0

    def _model(self, user: int) -> RidgeModel:
        if self.variant == "one":
            return self.models[0]
        if not 0 <= user < len(self.models):
            raise UnknownUser(user)
        return self.models[user]

    def select(self, step) -> int:
        return linucb_select(self._model(step.user), step.candidates, self.cfg)

    def update(self, step, chosen: int, reward: float) -> StepEvent:
        self._model(step.user).update(step.candidates[chosen], reward)
        return StepEvent(model_updated=True)


def oracle_linucb_step(models: dict, true_k: int, candidates, feedback,
                       cfg: UCBConfig) -> tuple[int, float]:
    if true_k not in models:
        raise UnknownParameter(true_k)
    return linucb_step(models[true_k], candidates, feedback, cfg)


class OracleLinUCB:
    """One LinUCB instance per ground-truth parameter, routed by the environment."""

    name = "oracle-linucb"

    def __init__(self, cfg: UCBConfig, m: int):
        self.cfg = cfg
        self.models = {k: RidgeModel(cfg.d, cfg.lam) for k in range(m)}
        self.detections = 0

    def _model(self, k: int) -> RidgeModel:
        try:
            return self.models[k]
        except KeyError:
            raise UnknownParameter(k) from None

    def select(self, step) -> int:
        return linucb_select(self._model(step.true_param_index), step.candidates, self.cfg)

    def update(self, step, chosen: int, reward: float) -> StepEvent:
        self._model(step.true_param_index).update(step.candidates[chosen], reward)
        return StepEvent(model_updated=True)


class RestartLinUCB:
    """Per-user LinUCB that restarts from scratch when a change is detected.

    A simplified dLinUCB: the detector is DyClu's windowed one-sample test,
    but there is no model pool, no sharing across users, and no reuse of old
    models.  Every observation is kept until a detection resets the model.
    """

    name = "dlinucb-restart"

    def __init__(self, cfg: DyCluConfig, n_users: int):
        self.cfg = cfg
        self.ucb = UCBConfig(cfg.d, cfg.sigma2, cfg.lam, cfg.delta)
        self.models = [RidgeModel(cfg.d, cfg.lam) for _ in range(n_users)]
        self.data = [Dataset(cfg.d, cfg.rel_tol) for _ in range(n_users)]
        self.windows = [deque(maxlen=cfg.tau) for _ in range(n_users)]
        self.threshold = detection_threshold(cfg)
        self.detections = 0

    def _check(self, user: int) -> None:
        if not 0 <= user < len(self.models):
            raise UnknownUser(user)

    def select(self, step) -> int:
        self._check(step.user)
        return linucb_select(self.models[step.user], step.candidates, self.ucb)

    def reset(self, user: int) -> None:
        self.models[user].reset()
        self.data[user] = Dataset(self.cfg.d, self.cfg.rel_tol)
        self.windows[user].clear()
        self.detections += 1

    def update(self, step, chosen: int, reward: float) -> StepEvent:
        user = step.user
        self._check(user)
        x = step.candidates[chosen]
        data = self.data[user]
        e = 0
        if data and np.any(x):
            stat, _ = one_sample_statistic(data, (x, reward), self.cfg.noise)
            e = int(stat > self.cfg.upsilon_e)
        window = self.windows[user]
        window.append(e)
        if sum(window) / len(window) > self.threshold:
            self.reset(user)
            return StepEvent(change_detected=True)
        self.models[user].update(x, reward)
        data.append(x, reward)
        return StepEvent(model_updated=True)


class ClusterGraph:
    """User graph whose connected components define the pooled models."""

    def __init__(self, n_users: int, d: int, lam: float = 1.0):
        self.lam = lam
        self.adjacency = np.ones((n_users, n_users), dtype=bool)
        np.fill_diagonal(self.adjacency, False)
        self.models = [RidgeModel(d, lam) for _ in range(n_users)]
        self.labels = np.zeros(n_users, dtype=int)
        self.n_components = 1

    def __contains__(self, user) -> bool:
        return 0 <= user < len(self.models)

    def component(self, user: int) -> list[int]:
        return np.flatnonzero(self.labels == self.labels[user]).tolist()

    def aggregate(self, user: int):
        """Pooled (A, b, n) of the user's connected component."""
        d = len(self.models[user].b)
        A = self.lam * np.eye(d)
        b = np.zeros(d)
        n = 0
        for j in self.component(user):
            mj = self.models[j]
            A += mj.A - self.lam * np.eye(d)
            b += mj.b
            n += mj.n_obs
        return A, b, n

    def prune(self, user: int, beta: float) -> bool:
        """Delete edges from ``user`` to users whose estimates are provably apart."""
        model = self.models[user]
        theta_u = model.theta
        width_u = club_width(model.n_obs, beta)
        removed = False
        for j in np.flatnonzero(self.adjacency[user]):
            other = self.models[j]
            if np.linalg.norm(theta_u - other.theta) > width_u + club_width(other.n_obs, beta):
                self.adjacency[user, j] = self.adjacency[j, user] = False
                removed = True
        if removed:
            self.n_components, self.labels = connected_components(
                csr_matrix(self.adjacency), directed=False)
        return removed


def club_width(n_obs: int, beta: float) -> float:
    return beta * math.sqrt((1.0 + math.log(1.0 + n_obs)) / (1.0 + n_obs))


def club_step(graph: ClusterGraph, user: int, candidates, feedback, cfg: UCBConfig,
              beta: float = 1.0) -> tuple[int, float]:
    """Select on the user's component, update the user's model, prune its edges."""
    if user not in graph:
        raise UnknownUser(user)
    A, b, n = graph.aggregate(user)
    chosen = ucb_select(A, b, n, candidates, cfg.sigma, cfg.lam, cfg.delta)
    reward = feedback(chosen)
    graph.models[user].update(np.asarray(candidates)[chosen], reward)
    graph.prune(user, beta)
    return chosen, reward


class CLUB:
    """Graph-based online clustering of bandits (edges are only ever deleted)."""

    name = "club"

    def __init__(self, cfg: UCBConfig, n_users: int, beta: float = 1.0):
        self.cfg = cfg
        self.beta = beta
        self.graph = ClusterGraph(n_users, cfg.d, cfg.lam)
        self.detections = 0

    def select(self, step) -> int:
        if step.user not in self.graph:
            raise UnknownUser(step.user)
        A, b, n = self.graph.aggregate(step.user)
        return ucb_select(A, b, n, step.candidates, self.cfg.sigma, self.cfg.lam, self.cfg.delta)

    def update(self, step, chosen: int, reward: float) -> StepEvent:
        self.graph.models[step.user].update(step.candidates[chosen], reward)
        self.graph.prune(step.user, self.beta)
        return StepEvent(model_updated=True, neighborhood_size=len(self.graph.component(step.user)))
