"""Experiment harness: configuration, metrics, CSV output and the CLI."""

from acrl.harness.metrics import (
    COLUMNS,
    MetricsRow,
    evaluate_policy,
    projection_baseline_step,
    read_csv,
    uniform_feasible,
    write_csv,
)

__all__ = [
    "COLUMNS",
    "MetricsRow",
    "evaluate_policy",
    "projection_baseline_step",
    "read_csv",
    "uniform_feasible",
    "write_csv",
]
