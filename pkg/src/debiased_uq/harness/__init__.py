from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .experiment import CoverageReport, StageError, run_experiment
from .metrics import export_histogram, hit_rates, rw_ratios

__all__ = ["ConfigError", "CoverageReport", "ExperimentConfig", "StageError", "export_histogram",
           "hit_rates", "load_config", "parse_config", "run_experiment", "rw_ratios"]
