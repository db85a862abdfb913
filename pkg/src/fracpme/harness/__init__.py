"""Configuration-driven experiment runner."""
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .fitting import fit_rate
from .runner import RunResult, run, to_csv
from .suites import SUITES

__all__ = [
    "ConfigError", "ExperimentConfig", "RunResult", "SUITES",
    "fit_rate", "load_config", "parse_config", "run", "to_csv",
]
