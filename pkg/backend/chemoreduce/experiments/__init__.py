"""Experiment harness: run configuration, workflows and output files."""

from chemoreduce.experiments.config import RunConfig, config_hash, load_config
from chemoreduce.experiments.outputs import emit_outputs
from chemoreduce.experiments.workflows import (
    ExperimentResult,
    SweepRow,
    orchestrate_experiment,
    run_branching,
    run_epsilon_sweep,
    run_model_comparison,
    run_ratio_study,
    run_single,
)

__all__ = [
    "RunConfig",
    "config_hash",
    "load_config",
    "emit_outputs",
    "ExperimentResult",
    "SweepRow",
    "orchestrate_experiment",
    "run_branching",
    "run_epsilon_sweep",
    "run_model_comparison",
    "run_ratio_study",
    "run_single",
]
