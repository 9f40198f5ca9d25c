"""Built-in CATE scoring learners.

A learner is fit on training data and returns a :class:`FittedLearner`
whose ``score`` method produces a scoring rule for any set of units.
Learners never emit hard assignments; budgets and thresholds are applied
by the estimators.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Protocol

import numpy as np
import scipy.linalg
from pydantic import BaseModel, Field, model_validator

from .config import DEFAULT_BIN_COUNT, DEFAULT_RIDGE_PENALTY
from .core.errors import InputError, LearnerFitError
from .core.models import ExperimentData, Rule

logger = logging.getLogger(__name__)


class LearnerKind(str, Enum):
    """Available scoring learners."""

    CONSTANT = "constant"
    DIFF_MEANS_BY_BIN = "diff_means_by_bin"
    LINEAR_T = "linear_t"


class LearnerSpec(BaseModel):
    """Learner choice and its parameters."""

    kind: LearnerKind
    scores: list[float] | None = Field(
        default=None, description="Per-unit scores for the constant learner, indexed by unit id"
    )
    covariate: int = Field(default=0, ge=0, description="Covariate column for binned learner")
    bins: int = Field(default=DEFAULT_BIN_COUNT, ge=1)
    ridge: float = Field(default=DEFAULT_RIDGE_PENALTY, ge=0.0, description="Ridge penalty")
    seed: int = Field(default=0, ge=0)

    model_config = {"frozen": True}

    @model_validator(mode="after")
    def _check_kind(self) -> LearnerSpec:
        if self.kind is LearnerKind.CONSTANT and self.scores is None:
            raise ValueError("the constant learner needs scores")
        return self

    @classmethod
    def parse(cls, text: str) -> LearnerSpec:
        """Parse ``kind[:key=value,...]``, e.g. ``linear_t:ridge=0.1``.

        Raises:
            InputError: On an unknown kind or a malformed parameter.
        """
        kind, _, params = text.partition(":")
        try:
            learner_kind = LearnerKind(kind.strip())
        except ValueError:
            choices = ", ".join(k.value for k in LearnerKind)
            raise InputError(f"unknown learner {kind!r} (choose from {choices})") from None
        values: dict[str, object] = {"kind": learner_kind}
        for item in filter(None, (part.strip() for part in params.split(","))):
            key, sep, value = item.partition("=")
            if not sep:
                raise InputError(f"learner parameter {item!r} must look like key=value")
            values[key.strip()] = value.strip()
        try:
            return cls.model_validate(values)
        except ValueError as e:
            raise InputError(f"invalid learner {text!r}: {e}") from None


class FittedLearner(Protocol):
    """A scoring function learned from training data."""

    def score(self, data: ExperimentData) -> Rule: ...


@dataclass(frozen=True, eq=False)
class ConstantScorer:
    """Ignores training data and returns preset per-unit scores."""

    scores: np.ndarray

    def score(self, data: ExperimentData) -> Rule:
        if data.unit_ids.max(initial=-1) >= self.scores.size:
            raise InputError(
                f"constant scores cover {self.scores.size} units, data references unit "
                f"{int(data.unit_ids.max())}"
            )
        return Rule.scoring(self.scores[data.unit_ids])


@dataclass(frozen=True, eq=False)
class DiffMeansByBin:
    """Difference in means within quantile bins of one covariate."""

    covariate: int
    edges: np.ndarray
    effects: np.ndarray

    def score(self, data: ExperimentData) -> Rule:
        x = _covariates(data)[:, self.covariate]
        return Rule.scoring(self.effects[np.searchsorted(self.edges, x, side="right")])


@dataclass(frozen=True, eq=False)
class LinearTLearner:
    """Separate ridge regressions per arm; the score is their difference."""

    coef_treated: np.ndarray
    coef_control: np.ndarray

    def score(self, data: ExperimentData) -> Rule:
        design = _design(_covariates(data))
        return Rule.scoring(design @ (self.coef_treated - self.coef_control))


def _covariates(data: ExperimentData) -> np.ndarray:
    if data.x is None:
        raise LearnerFitError("this learner needs covariates")
    return data.x


def _design(x: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(x.shape[0]), x])


def _ridge(design: np.ndarray, y: np.ndarray, penalty: float) -> np.ndarray:
    """Ridge coefficients with an unpenalized intercept."""
    gram = design.T @ design
    ridge = np.full(design.shape[1], penalty)
    ridge[0] = 0.0
    gram[np.diag_indices_from(gram)] += ridge
    if penalty == 0 and np.linalg.matrix_rank(gram) < gram.shape[0]:
        raise LearnerFitError("singular design with ridge=0; use a positive ridge penalty")
    try:
        return scipy.linalg.solve(gram, design.T @ y, assume_a="sym")
    except scipy.linalg.LinAlgError as e:
        raise LearnerFitError(f"ridge solve failed ({e}); use a larger ridge penalty") from e


def _fit_constant(spec: LearnerSpec, train: ExperimentData) -> ConstantScorer:
    scores = np.asarray(spec.scores, dtype=np.float64)
    scores.setflags(write=False)
    return ConstantScorer(scores)


def _fit_binned(spec: LearnerSpec, train: ExperimentData) -> DiffMeansByBin:
    x = _covariates(train)
    if spec.covariate >= x.shape[1]:
        raise LearnerFitError(f"covariate index {spec.covariate} out of range (d={x.shape[1]})")
    column = x[:, spec.covariate]
    quantiles = np.linspace(0.0, 1.0, spec.bins + 1)[1:-1]
    edges = np.unique(np.quantile(column, quantiles))
    bin_of = np.searchsorted(edges, column, side="right")
    overall = train.ate
    effects = np.full(edges.size + 1, overall)
    for b in range(edges.size + 1):
        members = bin_of == b
        treated = members & train.treated
        control = members & ~train.treated
        if treated.any() and control.any():
            effects[b] = train.y[treated].mean() - train.y[control].mean()
    return DiffMeansByBin(covariate=spec.covariate, edges=edges, effects=effects)


def _fit_linear(spec: LearnerSpec, train: ExperimentData) -> LinearTLearner:
    design = _design(_covariates(train))
    coefs = []
    for arm in (1, 0):
        mask = train.t == arm
        if not mask.any():
            raise LearnerFitError(f"no units in arm {arm} to fit")
        if spec.ridge == 0 and mask.sum() < design.shape[1]:
            raise LearnerFitError(
                f"arm {arm} has {int(mask.sum())} units for {design.shape[1]} coefficients; "
                "use a positive ridge penalty"
            )
        coefs.append(_ridge(design[mask], train.y[mask], spec.ridge))
    return LinearTLearner(coef_treated=coefs[0], coef_control=coefs[1])


_FITTERS = {
    LearnerKind.CONSTANT: _fit_constant,
    LearnerKind.DIFF_MEANS_BY_BIN: _fit_binned,
    LearnerKind.LINEAR_T: _fit_linear,
}


def fit(spec: LearnerSpec, train: ExperimentData) -> FittedLearner:
    """Fit a learner on training data.

    Deterministic in ``(spec, train)``.

    Raises:
        LearnerFitError: If the learner cannot be fit on ``train``.
    """
    fitted = _FITTERS[spec.kind](spec, train)
    logger.debug("Fitted %s learner on %d units", spec.kind.value, train.n)
    return fitted
