"""Data models for experiments, treatment rules and metric estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from pydantic import BaseModel, Field, computed_field, field_validator, model_validator

from .errors import DegenerateDataError, InputError


class Metric(str, Enum):
    """Evaluation metrics for individualized treatment rules."""

    PAV = "pav"
    PAPE = "pape"
    SAPE = "sape"
    PAPE_BUDGET = "pape_budget"
    PAPD_BUDGET = "papd_budget"
    AUPEC = "aupec"
    AUPEC_NORM = "aupec_norm"
    VALUE_DIFF = "value_diff"

    @property
    def centers_outcomes(self) -> bool:
        """Whether outcomes are centered before estimating this metric by default.

        Centering applies to the PAPE, PAPD and AUPEC families. The value
        metrics are estimated on the outcomes as given.
        """
        return self not in (Metric.PAV, Metric.VALUE_DIFF)


class RuleKind(str, Enum):
    """How a rule encodes its treatment decisions."""

    FIXED = "fixed"
    SCORING = "scoring"


def _frozen_array(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ExperimentData:
    """Outcomes and treatments of a completely randomized experiment.

    ``unit_ids`` records each row's position in the dataset it was cut
    from, so fold subsets can be matched back to per-unit quantities.
    """

    y: np.ndarray
    t: np.ndarray
    x: np.ndarray | None = None
    unit_ids: np.ndarray | None = None

    def __post_init__(self) -> None:
        y = _frozen_array(self.y, np.float64).reshape(-1)
        t_raw = np.asarray(self.t).reshape(-1)
        if y.shape != t_raw.shape:
            raise InputError(f"y has {y.size} values but t has {t_raw.size}")
        if not np.all(np.isfinite(y)):
            raise InputError("outcomes must be finite (no NaN or infinity)")
        if not np.all((t_raw == 0) | (t_raw == 1)):
            raise InputError("treatment indicators must be 0 or 1")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "t", _frozen_array(t_raw, np.int8))

        if self.x is not None:
            x = _frozen_array(self.x, np.float64)
            if x.ndim == 1:
                x = x.reshape(-1, 1)
                x.setflags(write=False)
            if x.shape[0] != y.size:
                raise InputError(f"covariates have {x.shape[0]} rows but y has {y.size}")
            if not np.all(np.isfinite(x)):
                raise InputError("covariates must be finite")
            object.__setattr__(self, "x", x)

        ids = np.arange(y.size) if self.unit_ids is None else self.unit_ids
        ids = _frozen_array(ids, np.int64).reshape(-1)
        if ids.size != y.size:
            raise InputError("unit_ids must have one entry per unit")
        object.__setattr__(self, "unit_ids", ids)

    @property
    def n(self) -> int:
        return int(self.y.size)

    @property
    def n1(self) -> int:
        return int(self.t.sum())

    @property
    def n0(self) -> int:
        return self.n - self.n1

    @property
    def treated(self) -> np.ndarray:
        """Boolean mask of treated units."""
        return self.t == 1

    @property
    def treated_mean(self) -> float:
        return float(self.y[self.treated].mean()) if self.n1 else math.nan

    @property
    def control_mean(self) -> float:
        return float(self.y[~self.treated].mean()) if self.n0 else math.nan

    @property
    def ate(self) -> float:
        """Difference-in-means estimate of the average treatment effect."""
        return self.treated_mean - self.control_mean

    @property
    def outcome_scale(self) -> float:
        """Largest absolute outcome, or 1 for all-zero outcomes."""
        scale = float(np.abs(self.y).max()) if self.n else 0.0
        return scale if scale > 0 else 1.0

    def require_arms(self, minimum: int = 1) -> None:
        """Raise DegenerateDataError unless both arms have ``minimum`` units."""
        if self.n1 < minimum or self.n0 < minimum:
            raise DegenerateDataError(
                f"need at least {minimum} treated and {minimum} control units, "
                f"got n1={self.n1}, n0={self.n0}"
            )

    def subset(self, index: np.ndarray) -> ExperimentData:
        """Rows selected by a boolean mask or integer index, keeping unit ids."""
        return ExperimentData(
            y=self.y[index],
            t=self.t[index],
            x=None if self.x is None else self.x[index],
            unit_ids=self.unit_ids[index],
        )

    def with_outcomes(self, y: np.ndarray) -> ExperimentData:
        """Copy with the outcome vector replaced."""
        return ExperimentData(y=y, t=self.t, x=self.x, unit_ids=self.unit_ids)


@dataclass(frozen=True, eq=False)
class Rule:
    """An individualized treatment rule evaluated on a set of units.

    A FIXED rule holds a 0/1 assignment per unit. A SCORING rule holds a
    real-valued score per unit; without a budget it treats units whose
    score exceeds ``c_star``.
    """

    kind: RuleKind
    values: np.ndarray
    c_star: float = -math.inf

    def __post_init__(self) -> None:
        values = np.asarray(self.values).reshape(-1)
        if self.kind is RuleKind.FIXED:
            if not np.all((values == 0) | (values == 1)):
                raise InputError("fixed assignments must be 0 or 1")
            values = _frozen_array(values, np.int8)
        else:
            values = _frozen_array(values, np.float64)
            if not np.all(np.isfinite(values)):
                raise InputError("scores must be finite")
            if math.isnan(self.c_star) or self.c_star == math.inf:
                raise InputError("c_star must be a real number or -inf")
        object.__setattr__(self, "values", values)

    @classmethod
    def fixed(cls, assignment) -> Rule:
        return cls(RuleKind.FIXED, assignment)

    @classmethod
    def scoring(cls, scores, c_star: float = -math.inf) -> Rule:
        return cls(RuleKind.SCORING, scores, c_star=float(c_star))

    @property
    def n(self) -> int:
        return int(self.values.size)

    @property
    def is_scoring(self) -> bool:
        return self.kind is RuleKind.SCORING

    def subset(self, index: np.ndarray) -> Rule:
        return Rule(self.kind, self.values[index], c_star=self.c_star)


class MetricSpec(BaseModel):
    """Which metric to estimate and with which budget or floor threshold."""

    kind: Metric
    budget: float | None = Field(default=None, ge=0.0, le=1.0, description="Budget p")
    c_star: float = Field(default=-math.inf, description="Minimum score treated")

    model_config = {"frozen": True}

    @model_validator(mode="after")
    def _check_budget(self) -> MetricSpec:
        needs_budget = self.kind in (Metric.PAPE_BUDGET, Metric.PAPD_BUDGET)
        if needs_budget and self.budget is None:
            raise ValueError(f"{self.kind.value} requires a budget")
        if not needs_budget and self.budget is not None:
            raise ValueError(f"{self.kind.value} does not take a budget")
        return self

    @property
    def label(self) -> str:
        if self.budget is not None:
            return f"{self.kind.value}@{self.budget:g}"
        return self.kind.value


class MetricEstimate(BaseModel):
    """Point estimate, standard error and diagnostics for one metric."""

    metric: Metric
    point: float
    std_error: float = Field(description="NaN when the variance is unavailable")
    n_used: int = Field(ge=0)
    n1: int = Field(ge=0)
    n0: int = Field(ge=0)
    proportion_treated: float = Field(ge=0.0, le=1.0)
    budget: float | None = None
    diagnostics: dict[str, float] = Field(default_factory=dict)

    model_config = {"frozen": True}

    @field_validator("std_error")
    @classmethod
    def _nonnegative_or_nan(cls, value: float) -> float:
        if not math.isnan(value) and value < 0:
            raise ValueError("std_error must be nonnegative")
        return value

    @computed_field  # type: ignore[prop-decorator]
    @property
    def variance(self) -> float:
        return self.std_error**2

    def confidence_interval(self, alpha: float = 0.05) -> tuple[float, float]:
        """Normal-approximation interval ``point ± z_{1-alpha/2} * std_error``."""
        from scipy.stats import norm

        if not 0.0 < alpha < 1.0:
            raise InputError(f"alpha must be in (0, 1), got {alpha}")
        half = float(norm.ppf(1.0 - alpha / 2.0)) * self.std_error
        return self.point - half, self.point + half


@dataclass(frozen=True, eq=False)
class PotentialPopulation:
    """Both potential outcomes for every unit of a finite population."""

    y0: np.ndarray
    y1: np.ndarray
    x: np.ndarray | None = None
    scores: np.ndarray | None = None

    def __post_init__(self) -> None:
        y0 = _frozen_array(self.y0, np.float64).reshape(-1)
        y1 = _frozen_array(self.y1, np.float64).reshape(-1)
        if y0.shape != y1.shape:
            raise InputError("y0 and y1 must have equal length")
        if not (np.all(np.isfinite(y0)) and np.all(np.isfinite(y1))):
            raise InputError("potential outcomes must be finite")
        object.__setattr__(self, "y0", y0)
        object.__setattr__(self, "y1", y1)
        if self.x is not None:
            object.__setattr__(self, "x", _frozen_array(self.x, np.float64))
        if self.scores is not None:
            scores = _frozen_array(self.scores, np.float64).reshape(-1)
            if scores.size != y0.size:
                raise InputError("scores must have one entry per unit")
            object.__setattr__(self, "scores", scores)

    @property
    def n(self) -> int:
        return int(self.y0.size)

    @property
    def tau(self) -> np.ndarray:
        """Unit-level treatment effects ``y1 - y0``."""
        return self.y1 - self.y0

    def observe(self, t: np.ndarray) -> ExperimentData:
        """Observed experiment under the assignment ``t``."""
        t = np.asarray(t)
        return ExperimentData(y=np.where(t == 1, self.y1, self.y0), t=t, x=self.x)

    def transformed(self, scale: float, shift: float) -> PotentialPopulation:
        """Copy with both potential outcomes mapped to ``scale * y + shift``."""
        return PotentialPopulation(
            y0=scale * self.y0 + shift,
            y1=scale * self.y1 + shift,
            x=self.x,
            scores=self.scores,
        )
