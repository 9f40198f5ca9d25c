"""Simulation studies: data-generating process and coverage reports."""

from .coverage import (
    CoverageMode,
    CoverageReport,
    CoverageRow,
    coverage_study,
    default_learners,
    default_metric_specs,
)
from .dgp import (
    COVARIATE_COLUMNS,
    CovariatePopulation,
    CovariateSource,
    DgpConfig,
    build_population,
    dgp_sample,
    treatment_effect,
)

__all__ = [
    "COVARIATE_COLUMNS",
    "CoverageMode",
    "CoverageReport",
    "CoverageRow",
    "CovariatePopulation",
    "CovariateSource",
    "DgpConfig",
    "build_population",
    "coverage_study",
    "default_learners",
    "default_metric_specs",
    "dgp_sample",
    "treatment_effect",
]
