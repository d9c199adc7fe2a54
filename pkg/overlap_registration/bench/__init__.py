"""Benchmark harness: experiment config, command runners, timing and tables."""
from .config import ConfigurationError, ExperimentConfig
from .report import avg_median_table, format_table, rotation_table, summary_rows, write_csv
from .runner import (
    EXIT_CELL_FAILURES,
    EXIT_CONFIG_ERROR,
    EXIT_OK,
    cmd_register,
    cmd_synth,
    cmd_timing,
    cmd_weights,
    load_dataset,
)
from .timing import TimingFit, TimingTracker, linear_fit

__all__ = [
    'ConfigurationError',
    'ExperimentConfig',
    'TimingFit',
    'TimingTracker',
    'EXIT_CELL_FAILURES',
    'EXIT_CONFIG_ERROR',
    'EXIT_OK',
    'avg_median_table',
    'cmd_register',
    'cmd_synth',
    'cmd_timing',
    'cmd_weights',
    'format_table',
    'linear_fit',
    'load_dataset',
    'rotation_table',
    'summary_rows',
    'write_csv',
]
