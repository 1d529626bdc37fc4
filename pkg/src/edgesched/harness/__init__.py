"""Experiment configuration, orchestration, metrics and replay fixtures."""

from .config import ConfigError, ExperimentConfig, load_config
from .metrics import MetricsReport
from .replay import ReplayError, run_replay
from .runner import measure_decision_latency, run_bench, run_eval, run_optimize, run_replay_to, run_train
