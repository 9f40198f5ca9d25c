"""Monte Carlo coverage studies of the estimators' confidence intervals."""

from __future__ import annotations

import csv
import io
import logging
import math
from collections.abc import Callable, Sequence
from enum import Enum
from pathlib import Path
from typing import Any, NamedTuple

import numpy as np
from pydantic import BaseModel, Field
from scipy.stats import norm

from ..config import DEFAULT_ALPHA, DEFAULT_FOLDS, MAX_TRIAL_REDRAWS
from ..core.data import center_outcomes
from ..core.errors import DegenerateDataError
from ..core.models import ExperimentData, Metric, MetricSpec, Rule
from ..core.parallel import run_ordered
from ..crossval.engine import crossval
from ..estimation.fixed import estimate_metric
from ..learners import LearnerKind, LearnerSpec, fit
from ..oracle import true_metric
from .dgp import (
    COVARIATE_COLUMNS,
    CovariatePopulation,
    DgpConfig,
    auxiliary_sample,
    build_population,
    draw_sample,
    trial_seed,
    truth_seed,
)

logger = logging.getLogger(__name__)

REPORT_FIELDS = [
    "scenario",
    "mode",
    "n",
    "metric",
    "truth",
    "bias",
    "sd",
    "mean_se",
    "coverage",
    "trials",
    "redraws",
]


class CoverageMode(str, Enum):
    """Rules fixed in advance, or learned by cross-validation in every trial."""

    FIXED = "fixed"
    CROSSVAL = "crossval"


class CoverageRow(BaseModel):
    """Summary of one metric over all trials of a scenario."""

    scenario: str
    mode: CoverageMode
    n: int
    metric: str
    truth: float
    bias: float
    sd: float
    mean_se: float
    coverage: float = Field(description="Share of intervals containing the truth")
    trials: int
    redraws: int = 0


class CoverageReport(BaseModel):
    """Rows of a coverage study, one per scenario and metric."""

    rows: list[CoverageRow] = Field(default_factory=list)

    def extend(self, other: CoverageReport) -> None:
        self.rows.extend(other.rows)

    def write_csv(self, target: Path | str | io.TextIOBase) -> None:
        """Write the report as CSV to a path or an open text stream."""
        if isinstance(target, (str, Path)):
            with open(target, "w", newline="", encoding="utf-8") as f:
                self.write_csv(f)
            return
        writer = csv.DictWriter(target, fieldnames=REPORT_FIELDS)
        writer.writeheader()
        for row in self.rows:
            record = row.model_dump()
            record["mode"] = row.mode.value
            writer.writerow(record)


def default_metric_specs(budget: float = 0.2) -> list[MetricSpec]:
    """PAPE and AUPEC of rules treating positive scores, budgeted PAPE and PAPD."""
    return [
        MetricSpec(kind=Metric.PAPE, c_star=0.0),
        MetricSpec(kind=Metric.PAPE_BUDGET, budget=budget),
        MetricSpec(kind=Metric.AUPEC, c_star=0.0),
        MetricSpec(kind=Metric.PAPD_BUDGET, budget=budget),
    ]


def default_learners() -> tuple[LearnerSpec, LearnerSpec]:
    """Linear T-learner, and binned difference in means on x3 for comparisons."""
    return (
        LearnerSpec(kind=LearnerKind.LINEAR_T),
        LearnerSpec(kind=LearnerKind.DIFF_MEANS_BY_BIN, covariate=COVARIATE_COLUMNS.index("x3")),
    )


class TrialOutcome(NamedTuple):
    points: list[float]
    std_errors: list[float]
    redraws: int


def _int_seed(seed: np.random.SeedSequence) -> int:
    return int(seed.generate_state(1)[0])


def _prepare(data: ExperimentData, spec: MetricSpec, center: bool) -> ExperimentData:
    return center_outcomes(data)[0] if center and spec.kind.centers_outcomes else data


# ======================================================================
# Trial workers
# ======================================================================


def _fixed_trial(args: tuple[Any, ...]) -> TrialOutcome:
    """Estimate every metric for the fixed rules on one (re-drawn if degenerate) sample."""
    config, population, scores_f, scores_g, specs, trial, center = args
    for attempt in range(MAX_TRIAL_REDRAWS + 1):
        seed = trial_seed(config, trial, attempt)
        draw = draw_sample(config, population, seed)
        try:
            rule = Rule.scoring(scores_f[draw.index])
            rule_g = Rule.scoring(scores_g[draw.index])
            estimates = [
                estimate_metric(
                    _prepare(draw.data, spec, center), spec, rule, rule_g, seed=_int_seed(seed)
                )
                for spec in specs
            ]
        except DegenerateDataError as e:
            logger.warning("Trial %d attempt %d degenerate (%s); re-drawing", trial, attempt, e)
            continue
        if all(math.isfinite(est.std_error) for est in estimates):
            return TrialOutcome(
                [est.point for est in estimates], [est.std_error for est in estimates], attempt
            )
        logger.warning("Trial %d attempt %d has no variance estimate; re-drawing", trial, attempt)
    raise DegenerateDataError(f"trial {trial}: no usable sample in {MAX_TRIAL_REDRAWS} re-draws")


def _crossval_trial(args: tuple[Any, ...]) -> TrialOutcome:
    """Cross-validated estimates of every metric on one sample."""
    config, population, learner, learner_g, specs, folds, seed_fn, index, center = args
    for attempt in range(MAX_TRIAL_REDRAWS + 1):
        seed = seed_fn(config, index, attempt)
        draw = draw_sample(config, population, seed)
        try:
            results = [
                crossval(
                    _prepare(draw.data, spec, center),
                    learner,
                    spec,
                    folds,
                    _int_seed(seed),
                    learner_g,
                ).pooled
                for spec in specs
            ]
        except DegenerateDataError as e:
            logger.warning("Sample %d attempt %d degenerate (%s); re-drawing", index, attempt, e)
            continue
        if all(math.isfinite(est.std_error) for est in results):
            return TrialOutcome(
                [est.point for est in results], [est.std_error for est in results], attempt
            )
        logger.warning("Sample %d attempt %d has no variance estimate; re-drawing", index, attempt)
    raise DegenerateDataError(f"sample {index}: no usable draw in {MAX_TRIAL_REDRAWS} re-draws")


# ======================================================================
# Study
# ======================================================================


def fixed_rule_scores(
    config: DgpConfig,
    population: CovariatePopulation,
    learner: LearnerSpec,
    learner_g: LearnerSpec,
) -> tuple[np.ndarray, np.ndarray]:
    """Population scores of the two rules, fit once on an auxiliary sample."""
    auxiliary = auxiliary_sample(config, population).data
    units = population.as_experiment()
    scores_f = fit(learner, auxiliary).score(units).values
    scores_g = fit(learner_g, auxiliary).score(units).values
    return scores_f, scores_g


def _summarize(
    config: DgpConfig,
    mode: CoverageMode,
    specs: Sequence[MetricSpec],
    truths: Sequence[float],
    outcomes: Sequence[TrialOutcome],
    alpha: float,
) -> CoverageReport:
    z = float(norm.ppf(1.0 - alpha / 2.0))
    points = np.array([o.points for o in outcomes])
    std_errors = np.array([o.std_errors for o in outcomes])
    redraws = sum(o.redraws for o in outcomes)
    trials = len(outcomes)
    rows = []
    for j, spec in enumerate(specs):
        errors = points[:, j] - truths[j]
        covered = np.abs(errors) <= z * std_errors[:, j]
        rows.append(
            CoverageRow(
                scenario=config.label,
                mode=mode,
                n=config.n,
                metric=spec.label,
                truth=truths[j],
                bias=float(errors.mean()),
                sd=float(points[:, j].std(ddof=1)) if trials > 1 else math.nan,
                mean_se=float(std_errors[:, j].mean()),
                coverage=float(covered.mean()),
                trials=trials,
                redraws=redraws,
            )
        )
    return CoverageReport(rows=rows)


def coverage_study(
    config: DgpConfig,
    metric_specs: Sequence[MetricSpec] | None = None,
    mode: CoverageMode = CoverageMode.FIXED,
    *,
    folds: int = DEFAULT_FOLDS,
    learner: LearnerSpec | None = None,
    learner_g: LearnerSpec | None = None,
    alpha: float = DEFAULT_ALPHA,
    center: bool = True,
    truth_replications: int | None = None,
    max_workers: int | None = 1,
    callback: Callable[[int, TrialOutcome], None] | None = None,
) -> CoverageReport:
    """Bias, spread and interval coverage of each metric over simulated trials.

    In fixed-rule mode the rules are fit once on an auxiliary sample and
    truths are exact population values. In cross-validation mode rules are
    re-learned in every trial and truths are the average estimate over
    ``truth_replications`` independent samples (default: ``config.trials``).

    Args:
        config: Scenario settings.
        metric_specs: Metrics to study; defaults to :func:`default_metric_specs`.
        mode: Fixed or cross-validated rules.
        folds: Folds per cross-validation.
        learner: Learner behind rule f; defaults to the linear T-learner.
        learner_g: Learner behind the comparison rule g of PAPD.
        alpha: Intervals have level ``1 - alpha``.
        center: Center outcomes before estimating.
        truth_replications: Samples averaged for cross-validated truths.
        max_workers: Process pool size over trials; does not affect results.
        callback: Called with ``(trial, outcome)`` as trials finish.

    Returns:
        CoverageReport with one row per metric.
    """
    specs = list(metric_specs) if metric_specs else default_metric_specs()
    default_f, default_g = default_learners()
    learner = learner or default_f
    learner_g = learner_g or default_g
    population = build_population(config)
    logger.info(
        "Coverage study: scenario=%s mode=%s n=%d trials=%d",
        config.label,
        mode.value,
        config.n,
        config.trials,
    )

    if mode is CoverageMode.FIXED:
        scores_f, scores_g = fixed_rule_scores(config, population, learner, learner_g)
        potential = population.potential()
        rule_f = Rule.scoring(scores_f)
        rule_g = Rule.scoring(scores_g)
        truths = [true_metric(potential, rule_f, spec, rule_g) for spec in specs]
        args_list = [
            (config, population, scores_f, scores_g, specs, trial, center)
            for trial in range(config.trials)
        ]
        outcomes = run_ordered(_fixed_trial, args_list, max_workers=max_workers, callback=callback)
        return _summarize(config, mode, specs, truths, outcomes, alpha)

    replications = config.trials if truth_replications is None else truth_replications
    truth_args = [
        (config, population, learner, learner_g, specs, folds, truth_seed, r, center)
        for r in range(replications)
    ]
    truth_runs = run_ordered(_crossval_trial, truth_args, max_workers=max_workers)
    truths = [float(np.mean([run.points[j] for run in truth_runs])) for j in range(len(specs))]
    logger.info("Approximated cross-validated truths from %d samples", replications)

    args_list = [
        (config, population, learner, learner_g, specs, folds, trial_seed, trial, center)
        for trial in range(config.trials)
    ]
    outcomes = run_ordered(_crossval_trial, args_list, max_workers=max_workers, callback=callback)
    return _summarize(config, mode, specs, truths, outcomes, alpha)
