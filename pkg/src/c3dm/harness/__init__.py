"""Experiment harness: configs, datasets, evaluation, ablations and the CLI."""

from .config import ConfigError, ExperimentConfig, load_config, save_config
from .experiments import (ModelActor, ModelCache, OracleActor, RandomActor, evaluate, run_ablation,
                          train_policy)
from .metrics import METRICS_HEADER, MetricsRow, read_metrics, summarize, write_metrics

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "load_config",
    "save_config",
    "ModelActor",
    "ModelCache",
    "OracleActor",
    "RandomActor",
    "evaluate",
    "run_ablation",
    "train_policy",
    "METRICS_HEADER",
    "MetricsRow",
    "read_metrics",
    "summarize",
    "write_metrics",
]
