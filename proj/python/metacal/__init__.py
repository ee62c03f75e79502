"""Verbalized-confidence calibration toolkit.

Thin wrapper over the C++ core: calibration metrics (ECE, AUC, AUCc, AUCa),
answer normalization, SFT target formatting, the paired bootstrap, and the
staged experiment pipeline.
"""

from metacal._core import (
    BackendError,
    ComparisonOutcome,
    ConfidenceReport,
    ConfigError,
    CorpusError,
    DependencyError,
    Error,
    MetricUndefinedError,
    __version__,
    accuracy,
    auc,
    auc_a,
    auc_c,
    ece,
    format_single_target,
    metrics_report,
    normalize_answer,
    paired_bootstrap,
    parse_single_target,
    reliability_diagram,
    run_stage,
    stage_names,
)

__all__ = [
    "BackendError",
    "ComparisonOutcome",
    "ConfidenceReport",
    "ConfigError",
    "CorpusError",
    "DependencyError",
    "Error",
    "MetricUndefinedError",
    "__version__",
    "accuracy",
    "auc",
    "auc_a",
    "auc_c",
    "ece",
    "format_single_target",
    "metrics_report",
    "normalize_answer",
    "paired_bootstrap",
    "parse_single_target",
    "reliability_diagram",
    "run_stage",
    "stage_names",
]
