from .metrics import (
    PRESETS,
    MetricSummary,
    RegistrationReport,
    Thresholds,
    compute_metrics,
    make_report,
    read_reports,
    recall_curve,
    write_recall_curve_csv,
    write_reports,
    write_summary_csv,
)
from .runner import MissingCheckpointError, run_benchmark

__all__ = [
    "PRESETS",
    "MetricSummary",
    "MissingCheckpointError",
    "RegistrationReport",
    "Thresholds",
    "compute_metrics",
    "make_report",
    "read_reports",
    "recall_curve",
    "run_benchmark",
    "write_recall_curve_csv",
    "write_reports",
    "write_summary_csv",
]
