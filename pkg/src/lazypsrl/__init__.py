"""Lazy posterior sampling for smoothly parameterized MDPs."""

from .agent import LazyPSRL, SafeRegion, StabilizedLazyPSRL
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .harness import ExperimentResult, RegretRecord, fit_regret_exponent, run_episode, run_experiment

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ExperimentResult",
    "LazyPSRL",
    "RegretRecord",
    "SafeRegion",
    "StabilizedLazyPSRL",
    "fit_regret_exponent",
    "load_config",
    "parse_config",
    "run_episode",
    "run_experiment",
]
