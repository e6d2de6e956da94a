"""Configs, experiment runs, reports and the command line."""

from .config import ConfigError, ExperimentSpec, RunPlan, emit_config, parse_config, parse_config_text
from .probe import UnsupportedArchitectureError, margin_probe, signed_margins
from .report import emit_report, rows_from_csv, rows_from_json, rows_to_csv, rows_to_json, write_experiment
from .runner import ExperimentResult, MetricsRow, SummaryLine, run_experiment, summarize

__all__ = [
    "ConfigError", "ExperimentSpec", "RunPlan", "emit_config", "parse_config", "parse_config_text",
    "UnsupportedArchitectureError", "margin_probe", "signed_margins",
    "emit_report", "rows_from_csv", "rows_from_json", "rows_to_csv", "rows_to_json", "write_experiment",
    "ExperimentResult", "MetricsRow", "SummaryLine", "run_experiment", "summarize",
]
