"""Linear bandits with chi-square homogeneity tests for change detection and clustering."""
from .baselines import CLUB, LinUCB, OracleLinUCB, RestartLinUCB, UCBConfig
from .config import ExperimentConfig, load_config, parse_config
from .core import DyClu, DyCluConfig, ModelPool, OracleDyClu, StepEvent
from .environment import EnvironmentConfig, EnvSpec, generate_environment, next_step, realize_reward
from .errors import ConfigError, DycluError, ParseError, Unsupported
from .harness import RunRecord, replay_experiment, run_experiment, simulate, summarize
from .homogeneity import (
    Dataset,
    NoiseModel,
    batch_statistics,
    homogeneity_statistic,
    homogeneity_test,
    one_sample_statistic,
    type1_bound,
    type2_bound,
)
from .numerics import (
    central_chi2_cdf,
    chi2_quantile,
    noncentral_chi2_cdf,
    numerical_rank,
    pseudo_inverse,
)
from .rng import Xoshiro256

__version__ = "0.1.0"

__all__ = [
    "CLUB", "LinUCB", "OracleLinUCB", "RestartLinUCB", "UCBConfig",
    "ExperimentConfig", "load_config", "parse_config",
    "DyClu", "DyCluConfig", "ModelPool", "OracleDyClu", "StepEvent",
    "EnvironmentConfig", "EnvSpec", "generate_environment", "next_step", "realize_reward",
    "ConfigError", "DycluError", "ParseError", "Unsupported",
    "RunRecord", "replay_experiment", "run_experiment", "simulate", "summarize",
    "Dataset", "NoiseModel", "batch_statistics", "homogeneity_statistic", "homogeneity_test",
    "one_sample_statistic", "type1_bound", "type2_bound",
    "central_chi2_cdf", "chi2_quantile", "noncentral_chi2_cdf", "numerical_rank", "pseudo_inverse",
    "Xoshiro256",
]
