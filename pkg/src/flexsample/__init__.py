"""Difficulty-aware curriculum sampling for long-tailed classification."""

from .config import ExperimentConfig, load_config
from .harness import aggregate_trials, run_experiment, run_trials

__all__ = ["ExperimentConfig", "aggregate_trials", "load_config", "run_experiment", "run_trials"]
__version__ = "0.1.0"
