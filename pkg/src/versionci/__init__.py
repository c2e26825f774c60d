"""Randomization inference for matched observational studies with versions of control."""
from loguru import logger

from .cohort import Cohort, FullMatch, MatchedSet, Unit, Version, VersionArm
from .cohort_loader import ColumnSpec, load_csv, subset_by_version, write_csv
from .error_handler import (
    CohortValidationError,
    DomainError,
    EnumerationLimitError,
    InfeasibleMatchError,
    InputFileError,
    NonMonotoneInversionError,
    VersionCIError,
)
from .interval_engine import Interval, IntervalLabel, IntervalSet, VersionData, bonferroni_family, interval_family, invert
from .matching import DistanceMatrix, RatioConstraint, full_match_cohort, mahalanobis_distances, optimal_full_match
from .rand_test import NullMethod, NullSpec, StatisticKind, StatisticSpec, TestResult, set_weights, statistic, test
from .sensitivity import AmplifyPair, GammaSpec, amplify, gamma_pvalue_bound, sensitivity_interval
from .sim_lab import SimDesign, SimReport, f_test, generate, power_study

logger.disable("versionci")

__version__ = "1.0.0"

__all__ = [
    "AmplifyPair", "Cohort", "CohortValidationError", "ColumnSpec", "DistanceMatrix", "DomainError",
    "EnumerationLimitError", "FullMatch", "GammaSpec", "InfeasibleMatchError", "InputFileError",
    "Interval", "IntervalLabel", "IntervalSet", "MatchedSet", "NonMonotoneInversionError", "NullMethod",
    "NullSpec", "RatioConstraint", "SimDesign", "SimReport", "StatisticKind", "StatisticSpec",
    "TestResult", "Unit", "Version", "VersionArm", "VersionCIError", "VersionData", "amplify",
    "bonferroni_family", "f_test", "full_match_cohort", "gamma_pvalue_bound", "generate",
    "interval_family", "invert", "load_csv", "mahalanobis_distances", "optimal_full_match",
    "power_study", "sensitivity_interval", "set_weights", "statistic", "subset_by_version", "test",
    "write_csv",
]
