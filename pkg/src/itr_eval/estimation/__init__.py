"""Estimators and variance machinery for fixed treatment rules."""

from .fixed import (
    AupecCurve,
    CurvePoint,
    attach_bias_bound,
    estimate_aupec,
    estimate_aupec_normalized,
    estimate_metric,
    estimate_papd_budget,
    estimate_pape,
    estimate_pape_budget,
    estimate_pav,
    estimate_sape,
    value_difference,
)
from .variance import (
    BiasBound,
    KappaProfile,
    ZMode,
    ZMomentEngine,
    bias_bound_aupec,
    bias_bound_papd,
    bias_bound_pape_budget,
    kappa_hat,
    kappa_profile,
    papd_cov_bound,
    reg_inc_beta,
    z_moment_terms,
)

__all__ = [
    "AupecCurve",
    "BiasBound",
    "CurvePoint",
    "KappaProfile",
    "ZMode",
    "ZMomentEngine",
    "attach_bias_bound",
    "bias_bound_aupec",
    "bias_bound_papd",
    "bias_bound_pape_budget",
    "estimate_aupec",
    "estimate_aupec_normalized",
    "estimate_metric",
    "estimate_papd_budget",
    "estimate_pape",
    "estimate_pape_budget",
    "estimate_pav",
    "estimate_sape",
    "kappa_hat",
    "kappa_profile",
    "papd_cov_bound",
    "reg_inc_beta",
    "value_difference",
    "z_moment_terms",
]
