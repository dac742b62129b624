"""Experiment configuration, orchestration and the command line."""

from .config import EXPERIMENTS, ExperimentConfig, load_config, parse_config
from .run import emit_plot_data, run

__all__ = ["EXPERIMENTS", "ExperimentConfig", "emit_plot_data", "load_config", "parse_config",
           "run"]
