from .config import ConfigError, ExperimentConfig
from .experiments import (
    CoverageReport,
    ExperimentAborted,
    bootstrap_clr_experiment,
    coverage_experiment,
    m_sweep_experiment,
    timing_experiment,
)

__all__ = [
    "ConfigError",
    "CoverageReport",
    "ExperimentAborted",
    "ExperimentConfig",
    "bootstrap_clr_experiment",
    "coverage_experiment",
    "m_sweep_experiment",
    "timing_experiment",
]
