"""Experiment configs, runs, matrices, reports and figures."""

from .config import ExperimentConfig, dump_config, load_config, save_config
from .figures import emit_curves
from .records import ExperimentRecord, load_record
from .report import delay_severity_report
from .runner import matrix, run

__all__ = [
    "ExperimentConfig", "ExperimentRecord", "delay_severity_report", "dump_config",
    "emit_curves", "load_config", "load_record", "matrix", "run", "save_config",
]
