"""
Services package: experiment dispatch and the selftest.
"""
from .experiment_service import (
    ExperimentConfig,
    ExperimentExecutionError,
    ExperimentValidationError,
    load_config,
    run_experiment,
    run_from_path,
)
from .selftest import run_selftest

__all__ = [
    "ExperimentConfig",
    "ExperimentExecutionError",
    "ExperimentValidationError",
    "load_config",
    "run_experiment",
    "run_from_path",
    "run_selftest",
]
