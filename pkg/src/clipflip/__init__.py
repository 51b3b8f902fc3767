"""Clusterwise sign-flip (clip) score tests for fixed effects in clustered,
possibly multivariate, linear models."""

__version__ = "0.1.0"

from .combine import combine, combined_test, holm, maxT_adjusted
from .data import (
    ClusteredDataset,
    HypothesisSpec,
    LongRecord,
    Schema,
    ingest_long,
    read_csv,
    reshape_crossed,
)
from .flips import directional_p, flip_scores, generate_flips, p_value
from .report import TestReport, baseline_report, run_clip
from .scores import cluster_scores, profile_nuisance, studentize
from .weights import (
    WorkingWeights,
    diagonal_weights,
    identity_weights,
    random_intercept_weights,
    user_weights,
)

__all__ = [
    "ClusteredDataset", "HypothesisSpec", "LongRecord", "Schema", "TestReport",
    "WorkingWeights", "baseline_report", "cluster_scores", "combine", "combined_test",
    "diagonal_weights", "directional_p", "flip_scores", "generate_flips", "holm",
    "identity_weights", "ingest_long", "maxT_adjusted", "p_value", "profile_nuisance",
    "random_intercept_weights", "read_csv", "reshape_crossed", "run_clip", "studentize",
    "user_weights",
]
