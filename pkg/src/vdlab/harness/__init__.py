"""Experiment harness: configs, multi-seed runs, metrics, plots, CLI."""

from .config import ExperimentConfig, load_experiment, parse_experiment
from .metrics import percentile_band, smooth
from .plotting import AGGREGATE_HEADER, read_aggregate, render_curves
from .runner import WORKERS_ENV, RunResult, aggregate, run_experiment, run_single

__all__ = [
    "AGGREGATE_HEADER",
    "ExperimentConfig",
    "RunResult",
    "WORKERS_ENV",
    "aggregate",
    "load_experiment",
    "parse_experiment",
    "percentile_band",
    "read_aggregate",
    "render_curves",
    "run_experiment",
    "run_single",
    "smooth",
]
