"""Synthetic piecewise-stationary, clustered linear bandit environment.

A pool of ``m`` unit-norm parameters, pairwise at least ``gamma`` apart, is
shared by ``n_users`` users.  Each user's parameter is piecewise constant
over that user's own interaction count; users are served round-robin and a
random subset of a fixed unit-norm arm pool is disclosed at every step.
"""
from __future__ import annotations

import bisect
import csv
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .errors import InfeasibleSeparation, OutOfHorizon, ParseError
from .rng import Xoshiro256

REJECTION_BUDGET = 10**6


@dataclass(frozen=True)
class EnvironmentConfig:
    n_users: int = 20
    m: int = 5
    d: int = 10
    n_arms: int = 100
    candidate_size: int = 25
    horizon: int = 5000
    smin: int = 50
    smax: int = 150
    sigma: float = 0.09
    gamma: float = 0.9

    def __post_init__(self):
        if self.n_users < 1 or self.m < 1 or self.d < 1:
            raise ValueError("n_users, m and d must be >= 1")
        if not 1 <= self.candidate_size <= self.n_arms:
            raise ValueError("candidate_size must lie in [1, n_arms]")
        if not 1 <= self.smin <= self.smax:
            raise ValueError("need 1 <= smin <= smax")
        if self.sigma < 0 or self.gamma < 0:
            raise ValueError("sigma and gamma must be >= 0")
        if self.horizon < self.n_users:
            raise ValueError("horizon must be >= n_users")


@dataclass(frozen=True)
class EnvSpec:
    """Ground truth of one generated environment. Immutable after generation.

    ``schedules[i]`` lists ``(start, k)`` pairs: from user-local interaction
    ``start`` (1-based) on, user ``i`` follows parameter ``k``.
    """

    d: int
    n_users: int
    m: int
    unique_params: np.ndarray
    arm_pool: np.ndarray
    schedules: tuple
    sigma2: float
    smin: int
    smax: int
    candidate_size: int
    horizon: int
    gamma: float
    seed: int
    _starts: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        self.unique_params.setflags(write=False)
        self.arm_pool.setflags(write=False)
        starts = tuple(tuple(s for s, _ in sched) for sched in self.schedules)
        object.__setattr__(self, "_starts", starts)

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    @property
    def n_arms(self) -> int:
        return len(self.arm_pool)

    def user_at(self, t: int) -> int:
        return (t - 1) % self.n_users

    def local_step(self, t: int) -> int:
        """1-based count of the served user's interactions up to and including t."""
        return (t - 1) // self.n_users + 1

    def local_horizon(self, user: int) -> int:
        full, extra = divmod(self.horizon, self.n_users)
        return full + (1 if user < extra else 0)

    def param_index(self, user: int, local_step: int) -> int:
        i = bisect.bisect_right(self._starts[user], local_step) - 1
        return self.schedules[user][i][1]

    def change_points(self, user: int) -> list[int]:
        """User-local steps at which the user's parameter switches."""
        return [s for s, _ in self.schedules[user][1:]]

    def n_periods(self, user: int) -> int:
        return len(self.schedules[user])

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "n_users": self.n_users,
            "m": self.m,
            "horizon": self.horizon,
            "sigma2": self.sigma2,
            "smin": self.smin,
            "smax": self.smax,
            "candidate_size": self.candidate_size,
            "gamma": self.gamma,
            "seed": self.seed,
            "unique_params": self.unique_params.tolist(),
            "arm_pool": self.arm_pool.tolist(),
            "schedules": [[list(p) for p in sched] for sched in self.schedules],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EnvSpec":
        return cls(
            d=data["d"], n_users=data["n_users"], m=data["m"],
            unique_params=np.array(data["unique_params"], dtype=float),
            arm_pool=np.array(data["arm_pool"], dtype=float),
            schedules=tuple(tuple((int(s), int(k)) for s, k in sched) for sched in data["schedules"]),
            sigma2=data["sigma2"], smin=data["smin"], smax=data["smax"],
            candidate_size=data["candidate_size"], horizon=data["horizon"],
            gamma=data["gamma"], seed=data["seed"],
        )


@dataclass(frozen=True)
class StepContext:
    """What the learner sees at step t (``true_param_index`` only for oracles)."""

    t: int
    user: int
    local_step: int
    arm_ids: tuple
    candidates: np.ndarray
    true_param_index: int


def _unit_vector(rng: Xoshiro256, d: int) -> np.ndarray:
    while True:
        v = rng.normal_vector(d)
        norm = np.linalg.norm(v)
        if norm > 0:
            return v / norm


def generate_environment(cfg: EnvironmentConfig, seed: int,
                         budget: int = REJECTION_BUDGET) -> EnvSpec:
    """Draw parameters, arms and schedules for ``cfg`` from a seeded stream."""
    rng = Xoshiro256.for_stream(seed, "environment")
    params: list[np.ndarray] = []
    attempts = 0
    while len(params) < cfg.m:
        attempts += 1
        if attempts > budget:
            raise InfeasibleSeparation(
                f"could not place {cfg.m} unit vectors {cfg.gamma} apart in d={cfg.d} "
                f"within {budget} draws (got {len(params)})")
        v = _unit_vector(rng, cfg.d)
        if all(np.linalg.norm(v - p) >= cfg.gamma for p in params):
            params.append(v)
    arms = np.array([_unit_vector(rng, cfg.d) for _ in range(cfg.n_arms)])

    schedules = []
    full, extra = divmod(cfg.horizon, cfg.n_users)
    for user in range(cfg.n_users):
        length = full + (1 if user < extra else 0)
        sched = []
        start, prev = 1, None
        if cfg.m == 1:
            # a single parameter admits no change points
            schedules.append(((1, 0),))
            continue
        while start <= length:
            k = rng.randbelow(cfg.m)
            while k == prev:
                k = rng.randbelow(cfg.m)
            sched.append((start, k))
            prev = k
            start += rng.integers(cfg.smin, cfg.smax)
        schedules.append(tuple(sched))

    return EnvSpec(
        d=cfg.d, n_users=cfg.n_users, m=cfg.m,
        unique_params=np.array(params), arm_pool=arms,
        schedules=tuple(schedules), sigma2=float(cfg.sigma) ** 2,
        smin=cfg.smin, smax=cfg.smax, candidate_size=cfg.candidate_size,
        horizon=cfg.horizon, gamma=cfg.gamma, seed=int(seed),
    )


def next_step(env: EnvSpec, t: int, rng: Xoshiro256) -> StepContext:
    """Serve user ((t-1) mod n) with a fresh random subset of the arm pool."""
    if not 1 <= t <= env.horizon:
        raise OutOfHorizon(f"t={t} outside [1, {env.horizon}]")
    user = env.user_at(t)
    local = env.local_step(t)
    ids = tuple(rng.sample_indices(env.n_arms, env.candidate_size))
    return StepContext(
        t=t, user=user, local_step=local, arm_ids=ids,
        candidates=env.arm_pool[list(ids)],
        true_param_index=env.param_index(user, local),
    )


def realize_reward(env: EnvSpec, step: StepContext, chosen: int,
                   rng: Xoshiro256) -> tuple[float, float]:
    """Noisy reward of the chosen candidate and its noiseless regret.

    Exactly one normal draw is consumed per call, so every learner sees the
    same noise sequence for a given seed.
    """
    theta = env.unique_params[step.true_param_index]
    means = step.candidates @ theta
    noise = rng.standard_normal()
    reward = float(means[chosen]) + math.sqrt(env.sigma2) * noise
    regret = float(means.max() - means[chosen])
    return reward, regret


@dataclass(frozen=True)
class ReplayEvent:
    user: str
    candidates: np.ndarray
    chosen: int
    reward: float
    random_reward: Optional[float] = None


REPLAY_HEADER = ["user", "context", "chosen", "reward"]


def load_replay(path, d: Optional[int] = None) -> Iterator[ReplayEvent]:
    """Iterate over a logged-interaction CSV.

    Header ``user,context,chosen,reward[,random_reward]``; ``context`` holds the
    candidate contexts as ``;``-separated groups of ``,``-separated reals.
    Raises :class:`ParseError` naming the line of the first malformed row.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return
        header = [h.strip() for h in header]
        if header not in (REPLAY_HEADER, REPLAY_HEADER + ["random_reward"]):
            raise ParseError(f"unexpected header {','.join(header)!r}", line=reader.line_num)
        has_random = len(header) == 5
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=line)
            try:
                groups = [[float(v) for v in g.split(",")] for g in row[1].split(";")]
                chosen = int(row[2])
                reward = float(row[3])
                random_reward = float(row[4]) if has_random and row[4].strip() else None
            except ValueError as exc:
                raise ParseError(str(exc), line=line) from None
            dims = {len(g) for g in groups}
            if len(dims) != 1:
                raise ParseError("candidate contexts have differing dimensions", line=line)
            row_d = dims.pop()
            if d is None:
                d = row_d
            elif row_d != d:
                raise ParseError(f"context dimension {row_d} does not match {d}", line=line)
            candidates = np.array(groups)
            if not np.all(np.isfinite(candidates)) or not math.isfinite(reward):
                raise ParseError("non-finite value", line=line)
            if not 0 <= chosen < len(candidates):
                raise ParseError(f"chosen index {chosen} out of range", line=line)
            yield ReplayEvent(row[0].strip(), candidates, chosen, reward, random_reward)
