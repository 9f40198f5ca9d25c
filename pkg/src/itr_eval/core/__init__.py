"""Core experiment data, treatment rules and shared plumbing."""

from .data import ColumnSpec, center_outcomes, load_experiment
from .errors import (
    DegenerateDataError,
    FoldDegenerateError,
    InputError,
    ItrEvalError,
    LearnerFitError,
    NumericDegeneracyError,
    SizeGuardError,
)
from .models import (
    ExperimentData,
    Metric,
    MetricEstimate,
    MetricSpec,
    PotentialPopulation,
    Rule,
    RuleKind,
)
from .rules import assignments, budget_count, threshold_for_budget

__all__ = [
    "ColumnSpec",
    "DegenerateDataError",
    "ExperimentData",
    "FoldDegenerateError",
    "InputError",
    "ItrEvalError",
    "LearnerFitError",
    "Metric",
    "MetricEstimate",
    "MetricSpec",
    "NumericDegeneracyError",
    "PotentialPopulation",
    "Rule",
    "RuleKind",
    "SizeGuardError",
    "assignments",
    "budget_count",
    "center_outcomes",
    "load_experiment",
    "threshold_for_budget",
]
