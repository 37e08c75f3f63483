"""Experiment orchestration: drive learners through environments, log, summarize."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .baselines import CLUB, LinUCB, OracleLinUCB, RestartLinUCB, UCBConfig
from .config import ExperimentConfig, LearnerBlock
from .core import DyClu, DyCluConfig
from .environment import (
    EnvSpec,
    StepContext,
    generate_environment,
    load_replay,
    next_step,
    realize_reward,
)
from .errors import ConfigError, Unsupported
from .rng import Xoshiro256

log = logging.getLogger(__name__)

RECORD_HEADER = ["t", "user", "algorithm", "chosen_index", "reward", "inst_regret", "cum_regret",
                 "discarded", "change_detected", "model_updated", "neighborhood_size"]
SUMMARY_FILE = "summary.json"


@dataclass
class RunRecord:
    t: int
    user: int
    algorithm: str
    chosen_index: int
    reward: float
    inst_regret: float
    cum_regret: float
    discarded: bool
    change_detected: bool
    model_updated: bool
    neighborhood_size: int

    def as_row(self) -> list[str]:
        return [str(self.t), str(self.user), self.algorithm, str(self.chosen_index),
                repr(self.reward), repr(self.inst_regret), repr(self.cum_regret),
                str(int(self.discarded)), str(int(self.change_detected)),
                str(int(self.model_updated)), str(self.neighborhood_size)]


def make_learner(block: LearnerBlock, env: EnvSpec):
    """Instantiate a learner; the known noise level defaults to the environment's."""
    params = block.parsed
    sigma = params.sigma if params.sigma is not None else env.sigma
    if not sigma > 0:
        raise ConfigError("learner needs sigma > 0 when the environment is noiseless",
                          f"learners.{block.name}.params.sigma")
    sigma2 = sigma * sigma
    if block.name in ("dyclu", "dlinucb-restart"):
        cfg = DyCluConfig(d=env.d, sigma2=sigma2, tau=params.tau, delta=params.delta,
                          delta_e=params.delta_e, upsilon_e=params.upsilon_e,
                          upsilon_c=params.upsilon_c, lam=params.lam,
                          max_outdated=params.max_outdated)
        return DyClu(cfg, env.n_users) if block.name == "dyclu" else RestartLinUCB(cfg, env.n_users)
    ucb = UCBConfig(env.d, sigma2, params.lam, params.delta)
    if block.name == "linucb-one":
        return LinUCB(ucb, env.n_users, "one")
    if block.name == "linucb-ind":
        return LinUCB(ucb, env.n_users, "ind")
    if block.name == "oracle-linucb":
        return OracleLinUCB(ucb, env.m)
    if block.name == "club":
        return CLUB(ucb, env.n_users, params.beta)
    raise Unsupported(f"unknown learner {block.name!r}")


def simulate(env: EnvSpec, learner, seed: int, algorithm: Optional[str] = None):
    """Yield one :class:`RunRecord` per step of the select -> reward -> observe loop.

    Candidate sets and noise come from two named streams of ``seed``, so all
    learners face identical draws.
    """
    algorithm = algorithm or learner.name
    cand_rng = Xoshiro256.for_stream(seed, "candidates")
    noise_rng = Xoshiro256.for_stream(seed, "noise")
    cum = 0.0
    for t in range(1, env.horizon + 1):
        step = next_step(env, t, cand_rng)
        chosen = learner.select(step)
        reward, regret = realize_reward(env, step, chosen, noise_rng)
        event = learner.update(step, chosen, reward)
        cum += regret
        yield RunRecord(t, step.user, algorithm, chosen, reward, regret, cum,
                        event.observation_discarded, event.change_detected,
                        event.model_updated, event.neighborhood_size)


def run_file_stem(learner: str, seed: int) -> str:
    return f"{learner}_seed{seed}"


def write_records(path: Path, records: Iterable[RunRecord]) -> dict:
    """Stream records to CSV; return the per-run summary numbers."""
    n = 0
    final = 0.0
    detections = 0
    neighborhood_total = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RECORD_HEADER)
        for rec in records:
            writer.writerow(rec.as_row())
            n += 1
            final = rec.cum_regret
            detections += int(rec.change_detected)
            neighborhood_total += rec.neighborhood_size
    return {"final_regret": final, "detections": detections,
            "mean_neighborhood": neighborhood_total / n if n else 0.0}


def run_single(env_cfg, block: LearnerBlock, seed: int, out_dir: Path) -> dict:
    """One (learner, seed) run: writes its CSV plus a small metadata sidecar."""
    out_dir.mkdir(parents=True, exist_ok=True)
    env = generate_environment(env_cfg, seed)
    learner = make_learner(block, env)
    stem = run_file_stem(block.name, seed)
    start = time.perf_counter()
    stats = write_records(out_dir / f"{stem}.csv", simulate(env, learner, seed, block.name))
    wall_ms = (time.perf_counter() - start) * 1000.0
    row = {"learner": block.name, "seed": seed, **stats, "wall_ms": wall_ms}
    with open(out_dir / f"{stem}.json", "w", encoding="utf-8") as fh:
        json.dump({"learner": block.name, "seed": seed, "wall_ms": wall_ms}, fh)
    log.info("%s seed=%d final_regret=%.3f (%.0f ms)", block.name, seed, stats["final_regret"], wall_ms)
    return row


def _run_task(args):
    return run_single(*args)


def max_workers() -> int:
    value = os.environ.get("DYCLU_THREADS")
    if value:
        try:
            return max(1, int(value))
        except ValueError:
            raise ConfigError(f"DYCLU_THREADS must be an integer, got {value!r}") from None
    return os.cpu_count() or 1


def build_summary(runs: list[dict]) -> dict:
    runs = sorted(runs, key=lambda r: (r["learner"], r["seed"]))
    learners = []
    for name in sorted({r["learner"] for r in runs}):
        mine = [r for r in runs if r["learner"] == name]
        entry = {"learner": name, "n_seeds": len(mine)}
        for key in ("final_regret", "detections", "mean_neighborhood", "wall_ms"):
            values = [float(r[key]) for r in mine]
            entry[f"{key}_mean"] = statistics.fmean(values)
            entry[f"{key}_std"] = statistics.stdev(values) if len(values) > 1 else 0.0
        learners.append(entry)
    return {"runs": runs, "learners": learners}


def write_summary(out_dir: Path, runs: list[dict]) -> dict:
    summary = build_summary(runs)
    with open(out_dir / SUMMARY_FILE, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
    return summary


def run_experiment(cfg: ExperimentConfig, seeds: Optional[list[int]] = None,
                   workers: Optional[int] = None) -> dict:
    """Run every (row, learner, seed); returns {row name or "": summary}."""
    seeds = list(cfg.seeds if seeds is None else seeds)
    root = Path(cfg.output_dir)
    tasks = []
    for row_name, env_block in cfg.rows():
        out_dir = root / row_name if row_name else root
        env_cfg = env_block.to_env_config()
        for block in cfg.learners:
            for seed in seeds:
                tasks.append((row_name or "", (env_cfg, block, seed, out_dir)))
    workers = workers or max_workers()
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_task, [args for _, args in tasks]))
    else:
        results = [_run_task(args) for _, args in tasks]
    summaries = {}
    for row_name, env_block in cfg.rows():
        key = row_name or ""
        runs = [res for (name, _), res in zip(tasks, results) if name == key]
        out_dir = root / row_name if row_name else root
        summaries[key] = write_summary(out_dir, runs)
    return summaries


def read_run(csv_path: Path) -> dict:
    """Recompute per-run summary numbers from a RunRecord CSV."""
    final = 0.0
    detections = 0
    sizes = 0
    n = 0
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RECORD_HEADER:
            raise ValueError(f"{csv_path}: not a run record file")
        for row in reader:
            n += 1
            final = float(row["cum_regret"])
            detections += int(row["change_detected"])
            sizes += int(row["neighborhood_size"])
    return {"final_regret": final, "detections": detections,
            "mean_neighborhood": sizes / n if n else 0.0}


def summarize(directory) -> dict:
    """Rebuild summary.json for a run directory (recursing into grid rows)."""
    directory = Path(directory)
    if not directory.is_dir():
        raise ConfigError(f"not a directory: {directory}")
    metas = sorted(directory.glob("*_seed*.json"))
    result = {}
    if metas:
        runs = []
        for meta_path in metas:
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
            stats = read_run(meta_path.with_suffix(".csv"))
            runs.append({"learner": meta["learner"], "seed": meta["seed"], **stats,
                         "wall_ms": meta["wall_ms"]})
        result[""] = write_summary(directory, runs)
    for sub in sorted(p for p in directory.iterdir() if p.is_dir()):
        for key, summary in summarize(sub).items():
            result[f"{sub.name}/{key}".rstrip("/")] = summary
    if not result:
        raise ConfigError(f"no run records found under {directory}")
    return result


def replay_experiment(log_path, cfg: ExperimentConfig) -> list[dict]:
    """Offline evaluation on a logged-interaction file.

    The learner is credited the logged reward when it picks the logged arm
    and zero otherwise (one rewarded item per candidate set, as in
    recommendation logs), and always observes the reward it was credited.
    Returns normalized accumulated reward against the log's random baseline,
    or against the expected reward of a uniform pick when that column is absent.
    """
    events = list(load_replay(log_path))
    users = {}
    for ev in events:
        users.setdefault(ev.user, len(users))
    d = events[0].candidates.shape[1] if events else 1
    sigma = cfg.rows()[0][1].sigma
    env = _replay_env(d, max(1, len(users)), sigma)
    results = []
    for block in cfg.learners:
        if block.name == "oracle-linucb":
            raise Unsupported("oracle-linucb needs ground truth and cannot replay a log",
                              "learners")
        learner = make_learner(block, env)
        total = 0.0
        baseline = 0.0
        local = {}
        for t, ev in enumerate(events, start=1):
            user = users[ev.user]
            local[user] = local.get(user, 0) + 1
            step = StepContext(t, user, local[user], tuple(range(len(ev.candidates))),
                               ev.candidates, -1)
            chosen = learner.select(step)
            reward = ev.reward if chosen == ev.chosen else 0.0
            learner.update(step, chosen, reward)
            total += reward
            baseline += ev.random_reward if ev.random_reward is not None \
                else ev.reward / len(ev.candidates)
        results.append({
            "learner": block.name,
            "events": len(events),
            "reward": total,
            "random_reward": baseline,
            "normalized_reward": total / baseline if baseline > 0 else math.nan,
        })
    return results


def _replay_env(d: int, n_users: int, sigma: float) -> EnvSpec:
    # minimal stand-in carrying the dimensions learners are built from
    return EnvSpec(d=d, n_users=n_users, m=1, unique_params=np.zeros((1, d)),
                   arm_pool=np.zeros((1, d)), schedules=tuple(((1, 0),) for _ in range(n_users)),
                   sigma2=sigma * sigma, smin=1, smax=1, candidate_size=1, horizon=1,
                   gamma=0.0, seed=0)
