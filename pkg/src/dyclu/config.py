"""Experiment configuration: JSON with a strict schema.

Unknown keys are rejected everywhere, since a misspelled threshold name would
otherwise silently fall back to its default.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError, Unsupported
from .environment import EnvironmentConfig

LEARNERS = ("dyclu", "linucb-one", "linucb-ind", "oracle-linucb", "dlinucb-restart", "club")
UNSUPPORTED = {"adts": "adTS is not implemented"}


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class EnvironmentBlock(_Strict):
    n_users: int = Field(20, ge=1)
    m: int = Field(5, ge=1)
    d: int = Field(10, ge=1)
    n_arms: int = Field(100, ge=1)
    candidate_size: int = Field(25, ge=1)
    horizon: int = Field(5000, ge=1)
    smin: int = Field(50, ge=1)
    smax: int = Field(150, ge=1)
    sigma: float = Field(0.09, ge=0)
    gamma: float = Field(0.9, ge=0)

    @model_validator(mode="after")
    def _consistent(self):
        if self.horizon < self.n_users:
            raise ValueError("horizon must be >= n_users")
        if self.smin > self.smax:
            raise ValueError("smin must be <= smax")
        if self.candidate_size > self.n_arms:
            raise ValueError("candidate_size must be <= n_arms")
        return self

    def to_env_config(self) -> EnvironmentConfig:
        return EnvironmentConfig(**self.model_dump())


class UCBParams(_Strict):
    sigma: Optional[float] = Field(None, gt=0)
    lam: float = Field(1.0, gt=0)
    delta: float = Field(0.1, gt=0, lt=1)


class CLUBParams(UCBParams):
    beta: float = Field(1.0, gt=0)


class DyCluParams(UCBParams):
    tau: int = Field(30, ge=1)
    delta_e: float = Field(0.01, gt=0, le=1)
    upsilon_e: Optional[float] = Field(None, ge=0)
    upsilon_c: Optional[float] = Field(None, ge=0)
    max_outdated: Optional[int] = Field(None, ge=0)


PARAMS = {
    "dyclu": DyCluParams,
    "dlinucb-restart": DyCluParams,
    "linucb-one": UCBParams,
    "linucb-ind": UCBParams,
    "oracle-linucb": UCBParams,
    "club": CLUBParams,
}


class LearnerBlock(_Strict):
    name: str
    params: dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _known(self):
        if self.name.lower() in UNSUPPORTED:
            raise ValueError(f"unsupported learner {self.name!r}: {UNSUPPORTED[self.name.lower()]}")
        if self.name not in PARAMS:
            raise ValueError(f"unknown learner {self.name!r}; expected one of {', '.join(LEARNERS)}")
        return self

    @property
    def parsed(self):
        return PARAMS[self.name].model_validate(self.params)


class GridRow(_Strict):
    name: str = Field(pattern=r"^[A-Za-z0-9_.-]+$")
    environment: EnvironmentBlock


class ExperimentConfig(_Strict):
    environment: Optional[EnvironmentBlock] = None
    grid: Optional[list[GridRow]] = None
    learners: list[LearnerBlock] = Field(min_length=1)
    seeds: list[int] = Field(default_factory=lambda: list(range(10)), min_length=1)
    output_dir: str = "out"

    @model_validator(mode="after")
    def _one_env_source(self):
        if (self.environment is None) == (self.grid is None):
            raise ValueError("give exactly one of 'environment' or 'grid'")
        if self.grid is not None:
            names = [row.name for row in self.grid]
            if len(set(names)) != len(names):
                raise ValueError("grid row names must be unique")
        names = [b.name for b in self.learners]
        if len(set(names)) != len(names):
            raise ValueError("learner names must be unique")
        return self

    def rows(self) -> list[tuple[Optional[str], EnvironmentBlock]]:
        """(row name, environment) pairs; the name is None for a single environment."""
        if self.grid is None:
            return [(None, self.environment)]
        return [(row.name, row.environment) for row in self.grid]


def _error_path(err: dict) -> str:
    return ".".join(str(p) for p in err["loc"] if not str(p).startswith("function-"))


def parse_config(data: dict, base_dir: Optional[Path] = None) -> ExperimentConfig:
    try:
        cfg = ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        msg = err["msg"].removeprefix("Value error, ")
        if "unsupported learner" in msg:
            raise Unsupported(msg, _error_path(err)) from None
        raise ConfigError(msg, _error_path(err)) from None
    for i, block in enumerate(cfg.learners):
        try:
            block.parsed
        except ValidationError as exc:
            err = exc.errors()[0]
            path = ".".join(["learners", str(i), "params", _error_path(err)]).rstrip(".")
            raise ConfigError(err["msg"].removeprefix("Value error, "), path) from None
    if base_dir is not None and not Path(cfg.output_dir).is_absolute():
        cfg = cfg.model_copy(update={"output_dir": str(base_dir / cfg.output_dir)})
    return cfg


def load_config(path) -> ExperimentConfig:
    """Read and validate a JSON config. Relative output dirs resolve against the CWD."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return parse_config(data)


def json_schema() -> dict:
    return ExperimentConfig.model_json_schema()
