"""Cross-validated evaluation of learned treatment rules."""

from .covariance import (
    RuleCovariances,
    pair_covariance,
    pair_covariance_naive,
    pairwise_rule_covariance,
)
from .engine import (
    CvResult,
    FoldEstimate,
    crossval,
    cv_aupec,
    cv_papd_budget,
    cv_variance_aupec,
    cv_variance_papd_budget,
    cv_variance_pape,
    cv_variance_pape_budget,
    cv_variance_pav,
)
from .folds import FoldPlan, make_folds

__all__ = [
    "CvResult",
    "FoldEstimate",
    "FoldPlan",
    "RuleCovariances",
    "crossval",
    "cv_aupec",
    "cv_papd_budget",
    "cv_variance_aupec",
    "cv_variance_papd_budget",
    "cv_variance_pape",
    "cv_variance_pape_budget",
    "cv_variance_pav",
    "make_folds",
    "pair_covariance",
    "pair_covariance_naive",
    "pairwise_rule_covariance",
]
