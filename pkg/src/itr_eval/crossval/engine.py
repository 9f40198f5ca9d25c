"""Cross-validated evaluation of estimated treatment rules.

For each fold k a learner is fit on the other K - 1 folds and the
resulting rule is evaluated on fold k with the fixed-rule estimators.
The pooled estimate is the average of the K fold estimates. Its variance
adds the cross-fold covariance of the fitted rules to the fold-level
terms and subtracts the between-fold spread, with the spread capped at
the single-fold variance so the subtraction cannot overshoot.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Any, NamedTuple

import numpy as np

from ..config import DEFAULT_MC_DRAWS
from ..core.errors import DegenerateDataError, FoldDegenerateError, InputError, LearnerFitError
from ..core.models import ExperimentData, Metric, MetricEstimate, MetricSpec, Rule
from ..core.parallel import run_ordered
from ..core.rules import assignments, budget_count
from ..estimation.fixed import aupec_weights, estimate_metric
from ..estimation.variance import (
    ZMode,
    ZMomentEngine,
    budget_kappa_term,
    finalize_variance,
    kappa_profile,
    neyman_terms,
    papd_cov_bound,
)
from ..learners import LearnerSpec, fit
from .covariance import pairwise_rule_covariance
from .folds import FoldPlan, make_folds

logger = logging.getLogger(__name__)

SUPPORTED_METRICS = (
    Metric.PAV,
    Metric.PAPE,
    Metric.PAPE_BUDGET,
    Metric.PAPD_BUDGET,
    Metric.AUPEC,
)


class FoldEstimate(NamedTuple):
    """Estimate on test fold ``fold`` for the rule fit on the other folds."""

    fold: int
    estimate: MetricEstimate


@dataclass(frozen=True, eq=False)
class CvResult:
    """Outcome of a cross-validated evaluation.

    Attributes:
        spec: Metric that was estimated.
        plan: Fold partition.
        per_fold: One estimate per test fold, in fold order.
        pooled: Fold-averaged estimate with the cross-validated standard error.
        s_f_squared: Sample variance of the per-fold point estimates.
        components: Named pieces of the pooled variance.
        fold_scores: K x n scores; row k is the rule fit without fold k applied to every unit.
        fold_scores_g: Same for the comparison learner, if any.
    """

    spec: MetricSpec
    plan: FoldPlan
    per_fold: list[FoldEstimate]
    pooled: MetricEstimate
    s_f_squared: float
    components: dict[str, float]
    fold_scores: np.ndarray
    fold_scores_g: np.ndarray | None = None

    @property
    def points(self) -> np.ndarray:
        return np.array([fe.estimate.point for fe in self.per_fold])

    def test_fold(self, data: ExperimentData, k: int) -> tuple[ExperimentData, Rule, Rule | None]:
        """Test data of fold k with the fitted rules restricted to it."""
        mask = self.plan.test_mask(k)
        rule = Rule.scoring(self.fold_scores[k][mask], c_star=self.spec.c_star)
        rule_g = None
        if self.fold_scores_g is not None:
            rule_g = Rule.scoring(self.fold_scores_g[k][mask], c_star=self.spec.c_star)
        return data.subset(mask), rule, rule_g


def _fold_seed(seed: int, k: int) -> int:
    return int(np.random.SeedSequence([seed, k]).generate_state(1)[0])


# ======================================================================
# Fold worker
# ======================================================================


def _evaluate_fold(args: tuple[Any, ...]) -> tuple[np.ndarray, np.ndarray | None, MetricEstimate]:
    """Fit on the training folds and evaluate on test fold k.

    Module-level so it can run in a process pool.
    """
    data, fold_of, k, learner, learner_g, spec, z_mode, draws, seed = args
    train = data.subset(fold_of != k)
    test_mask = fold_of == k
    try:
        scores = fit(learner, train).score(data).values
        scores_g = None if learner_g is None else fit(learner_g, train).score(data).values
    except LearnerFitError as e:
        raise FoldDegenerateError(k, f"learner fit failed: {e}") from e

    test = data.subset(test_mask)
    try:
        test.require_arms(minimum=2)
        rule = Rule.scoring(scores[test_mask], c_star=spec.c_star)
        rule_g = None if scores_g is None else Rule.scoring(scores_g[test_mask], c_star=spec.c_star)
        estimate = estimate_metric(
            test, spec, rule, rule_g, z_mode=z_mode, draws=draws, seed=_fold_seed(seed, k)
        )
    except DegenerateDataError as e:
        raise FoldDegenerateError(k, str(e)) from e
    return scores, scores_g, estimate


# ======================================================================
# Variance assembly
# ======================================================================


def _subtract_spread(single: float, s_f_squared: float, K: int) -> float:
    """``single - (K - 1) / K * min(S_F^2, single)``."""
    if math.isnan(single) or math.isnan(s_f_squared):
        return math.nan
    return single - (K - 1) / K * min(s_f_squared, single)


def _finish(components: dict[str, float], s_f_squared: float, K: int) -> dict[str, float]:
    single = components["single_fold_variance"]
    components["s_f_squared"] = s_f_squared
    components["variance"] = _subtract_spread(single, s_f_squared, K)
    return components


def _fold_assignments(result: CvResult, scores: np.ndarray) -> np.ndarray:
    """K x n budget-free assignments of the fitted rules."""
    return np.vstack([assignments(Rule.scoring(row, c_star=result.spec.c_star)) for row in scores])


def _fold_size(plan: FoldPlan) -> int:
    return int(round(plan.m))


def _mean_diagnostic(result: CvResult, key: str) -> float:
    values = [fe.estimate.diagnostics.get(key, math.nan) for fe in result.per_fold]
    return float(np.mean(values))


def _pav_components(result: CvResult, data: ExperimentData) -> dict[str, float]:
    F = _fold_assignments(result, result.fold_scores)
    marginal = []
    for k in range(result.plan.K):
        test = data.subset(result.plan.test_mask(k))
        f = F[k][result.plan.test_mask(k)]
        marginal.append(neyman_terms(np.where(test.treated, f * test.y, (1 - f) * test.y), test))
    covariance = pairwise_rule_covariance(F, data).effect_pair
    marginal_term = float(np.mean(marginal))
    return {
        "marginal": marginal_term,
        "rule_covariance": covariance,
        "single_fold_variance": marginal_term + covariance,
    }


def cv_variance_pav(result: CvResult, data: ExperimentData) -> float:
    """Variance of the cross-validated population average value estimator."""
    return _finish(_pav_components(result, data), result.s_f_squared, result.plan.K)["variance"]


def _pape_components(result: CvResult, data: ExperimentData) -> dict[str, float]:
    plan = result.plan
    F = _fold_assignments(result, result.fold_scores)
    marginal = []
    p_hats = []
    for k in range(plan.K):
        mask = plan.test_mask(k)
        test = data.subset(mask)
        f = F[k][mask]
        p_hat = float(f.mean())
        p_hats.append(p_hat)
        marginal.append(neyman_terms((f - p_hat) * test.y, test))

    m = plan.m
    p_f = float(np.mean(p_hats))
    tau = data.ate
    tau_f = float(result.points.mean())
    cov = pairwise_rule_covariance(F, data)
    marginal_term = float(np.mean(marginal))
    threshold_term = (
        tau_f**2 - m * p_f * (1 - p_f) * tau**2 + 2 * (m - 1) * (2 * p_f - 1) * tau * tau_f
    ) / m**2
    covariance_term = (
        (m - 3) * (m - 2) * tau**2 * cov.plain
        + (m**2 - 2 * m + 2) * cov.effect_pair
        - 2 * (m - 2) ** 2 * tau * cov.effect
    ) / m**2
    single = (m / (m - 1)) ** 2 * (marginal_term + threshold_term + covariance_term)
    return {
        "marginal": marginal_term,
        "threshold_term": threshold_term,
        "rule_covariance": covariance_term,
        "p_hat": p_f,
        "single_fold_variance": single,
    }


def cv_variance_pape(result: CvResult, data: ExperimentData) -> float:
    """Variance of the cross-validated PAPE estimator for budget-free rules."""
    return _finish(_pape_components(result, data), result.s_f_squared, result.plan.K)["variance"]


def _pape_budget_components(
    result: CvResult, data: ExperimentData, p: float
) -> dict[str, float]:
    plan = result.plan
    marginal = []
    for k in range(plan.K):
        test, rule, _ = result.test_fold(data, k)
        f = assignments(rule, p)
        marginal.append(neyman_terms((f - p) * test.y, test))
    marginal_term = float(np.mean(marginal))

    m = _fold_size(plan)
    z = budget_count(m, p)
    kappa_term = 0.0
    components: dict[str, float] = {"marginal": marginal_term}
    if 0 < z < m:
        kappa1 = _mean_diagnostic(result, "kappa_treated")
        kappa0 = _mean_diagnostic(result, "kappa_untreated")
        kappa_term = budget_kappa_term(m, z, p, kappa1, kappa0)
        components.update(kappa_treated=kappa1, kappa_untreated=kappa0)
    components["kappa_term"] = kappa_term
    components["single_fold_variance"] = marginal_term + kappa_term
    return components


def cv_variance_pape_budget(result: CvResult, data: ExperimentData, p: float) -> float:
    """Variance of the cross-validated budgeted PAPE estimator.

    The kappa plug-ins are the fold averages of the per-fold
    difference-in-means at the budget, each with its own edge substitution.
    """
    components = _pape_budget_components(result, data, p)
    return _finish(components, result.s_f_squared, result.plan.K)["variance"]


def _papd_budget_components(
    result: CvResult, data: ExperimentData, p: float
) -> dict[str, float]:
    plan = result.plan
    if result.fold_scores_g is None:
        raise InputError("PAPD needs a comparison learner")
    marginal = []
    for k in range(plan.K):
        test, rule_f, rule_g = result.test_fold(data, k)
        diff = assignments(rule_f, p) - assignments(rule_g, p)  # type: ignore[arg-type]
        marginal.append(neyman_terms(diff * test.y, test))
    marginal_term = float(np.mean(marginal))

    m = _fold_size(plan)
    z = budget_count(m, p)
    components: dict[str, float] = {"marginal": marginal_term}
    kappa_term = 0.0
    if 0 < z < m:
        kappa_f = _mean_diagnostic(result, "kappa_f_treated")
        kappa_g = _mean_diagnostic(result, "kappa_g_treated")
        kappa_term = z * (z - m) / (m**2 * (m - 1)) * (kappa_f**2 + kappa_g**2)
        kappa_term += 2 * papd_cov_bound(m, p, kappa_f, kappa_g)
        components.update(kappa_f_treated=kappa_f, kappa_g_treated=kappa_g)
    components["kappa_term"] = kappa_term
    components["single_fold_variance"] = marginal_term + kappa_term
    return components


def cv_variance_papd_budget(result: CvResult, data: ExperimentData, p: float) -> float:
    """Variance of the cross-validated budgeted PAPD, with the conservative covariance bound."""
    components = _papd_budget_components(result, data, p)
    return _finish(components, result.s_f_squared, result.plan.K)["variance"]


def _averaged_kappa_profiles(
    result: CvResult, data: ExperimentData, m: int
) -> tuple[np.ndarray, np.ndarray] | None:
    """Fold-averaged kappa profiles on the grid z = 1..m.

    A fold of size m_k contributes its entry at ``round(z * m_k / m)``,
    clipped to [1, m_k]. Returns None if any fold has no estimable profile.
    """
    grid = np.arange(1, m + 1)
    treated = np.zeros(m)
    untreated = np.zeros(m)
    for k in range(result.plan.K):
        test, rule, _ = result.test_fold(data, k)
        try:
            profile = kappa_profile(test, rule)
        except DegenerateDataError:
            logger.warning("Fold %d has no estimable kappa profile; AUPEC variance unavailable", k)
            return None
        index = np.clip(np.rint(grid * test.n / m).astype(np.int64), 1, test.n) - 1
        treated += profile.treated[index]
        untreated += profile.untreated[index]
    K = result.plan.K
    return treated / K, untreated / K


def _aupec_components(
    result: CvResult,
    data: ExperimentData,
    z_mode: ZMode,
    draws: int,
    seed: int,
) -> dict[str, float]:
    plan = result.plan
    marginal = []
    p_hats = []
    for k in range(plan.K):
        test, rule, _ = result.test_fold(data, k)
        w, n_f = aupec_weights(rule, result.spec.c_star)
        p_hats.append(n_f / test.n)
        marginal.append(neyman_terms((w - 0.5) * test.y, test))
    marginal_term = float(np.mean(marginal))
    p_hat = float(np.mean(p_hats))

    m = _fold_size(plan)
    components: dict[str, float] = {"marginal": marginal_term, "p_hat": p_hat}
    profiles = _averaged_kappa_profiles(result, data, m)
    if profiles is None:
        components["single_fold_variance"] = math.nan
        return components
    engine = ZMomentEngine(
        n=m,
        p_hat=p_hat,
        kappa_treated=profiles[0],
        kappa_untreated=profiles[1],
        mode=z_mode,
        draws=draws,
        seed=_fold_seed(seed, plan.K),
    )
    terms = engine.terms()
    components.update(z_expectation=terms.expectation_term, z_variance=terms.variance_term)
    components["single_fold_variance"] = (
        marginal_term + terms.expectation_term + terms.variance_term
    )
    return components


def cv_variance_aupec(
    result: CvResult,
    data: ExperimentData,
    *,
    z_mode: ZMode = ZMode.MONTE_CARLO,
    draws: int = DEFAULT_MC_DRAWS,
    seed: int = 0,
) -> float:
    """Variance of the cross-validated AUPEC estimator.

    The binomial Z moments are taken at the fold size with the fold-averaged
    proportion treated and fold-averaged kappa profiles.
    """
    components = _aupec_components(result, data, z_mode, draws, seed)
    return _finish(components, result.s_f_squared, result.plan.K)["variance"]


def _components(
    result: CvResult, data: ExperimentData, z_mode: ZMode, draws: int, seed: int
) -> dict[str, float]:
    spec = result.spec
    if spec.kind is Metric.PAV:
        components = _pav_components(result, data)
    elif spec.kind is Metric.PAPE:
        components = _pape_components(result, data)
    elif spec.kind is Metric.PAPE_BUDGET:
        components = _pape_budget_components(result, data, spec.budget)  # type: ignore[arg-type]
    elif spec.kind is Metric.PAPD_BUDGET:
        components = _papd_budget_components(result, data, spec.budget)  # type: ignore[arg-type]
    else:
        components = _aupec_components(result, data, z_mode, draws, seed)
    return _finish(components, result.s_f_squared, result.plan.K)


# ======================================================================
# Entry points
# ======================================================================


def crossval(
    data: ExperimentData,
    learner: LearnerSpec,
    metric_spec: MetricSpec,
    K: int,
    seed: int,
    learner_g: LearnerSpec | None = None,
    *,
    max_workers: int | None = 1,
    z_mode: ZMode = ZMode.MONTE_CARLO,
    draws: int = DEFAULT_MC_DRAWS,
) -> CvResult:
    """Cross-validated estimate of a metric for rules produced by a learner.

    Args:
        data: Full experiment.
        learner: Learner fit on each training split.
        metric_spec: PAV, PAPE, PAPE_BUDGET, PAPD_BUDGET or AUPEC.
        K: Number of folds.
        seed: Seed for the fold partition and all Monte Carlo draws.
        learner_g: Comparison learner, required for PAPD_BUDGET.
        max_workers: Process pool size for the folds; does not affect results.
        z_mode: Evaluation of the binomial Z moments for AUPEC.
        draws: Monte Carlo draws of Z.

    Returns:
        CvResult whose pooled point is the mean of the fold estimates.

    Raises:
        InputError: On an unsupported metric or a missing comparison learner.
        FoldDegenerateError: If some fold cannot be fit or evaluated.
    """
    if metric_spec.kind not in SUPPORTED_METRICS:
        supported = ", ".join(m.value for m in SUPPORTED_METRICS)
        raise InputError(
            f"{metric_spec.kind.value} is not available under cross-validation "
            f"(choose from {supported})"
        )
    if metric_spec.kind is Metric.PAPD_BUDGET and learner_g is None:
        raise InputError("cross-validated PAPD needs a comparison learner")
    plan = make_folds(data, K, seed)
    logger.info("Cross-validating %s over %d folds (seed=%d)", metric_spec.label, K, seed)

    args_list = [
        (data, plan.fold_of, k, learner, learner_g, metric_spec, z_mode, draws, seed)
        for k in range(K)
    ]
    outcomes = run_ordered(_evaluate_fold, args_list, max_workers=max_workers)

    fold_scores = np.vstack([scores for scores, _, _ in outcomes])
    fold_scores_g = None if learner_g is None else np.vstack([g for _, g, _ in outcomes])
    per_fold = [FoldEstimate(k, estimate) for k, (_, _, estimate) in enumerate(outcomes)]
    points = np.array([fe.estimate.point for fe in per_fold])
    for fe in per_fold:
        logger.debug("Fold %d: %s = %.6g", fe.fold, metric_spec.label, fe.estimate.point)

    placeholder = MetricEstimate(
        metric=metric_spec.kind,
        point=float(points.mean()),
        std_error=math.nan,
        n_used=data.n,
        n1=data.n1,
        n0=data.n0,
        proportion_treated=float(np.mean([fe.estimate.proportion_treated for fe in per_fold])),
        budget=metric_spec.budget,
    )
    result = CvResult(
        spec=metric_spec,
        plan=plan,
        per_fold=per_fold,
        pooled=placeholder,
        s_f_squared=float(points.var(ddof=1)),
        components={},
        fold_scores=fold_scores,
        fold_scores_g=fold_scores_g,
    )

    components = _components(result, data, z_mode, draws, seed)
    diagnostics = dict(components)
    diagnostics["folds"] = float(K)
    if not plan.equal:
        diagnostics["folds_unequal"] = 1.0
    if any("kappa_substituted" in fe.estimate.diagnostics for fe in per_fold):
        diagnostics["kappa_substituted"] = 1.0
    std_error = finalize_variance(components["variance"], diagnostics)
    pooled = placeholder.model_copy(update={"std_error": std_error, "diagnostics": diagnostics})
    return replace(result, pooled=pooled, components=components)


def cv_papd_budget(
    data: ExperimentData,
    learner_f: LearnerSpec,
    learner_g: LearnerSpec,
    p: float,
    K: int,
    seed: int,
    *,
    max_workers: int | None = 1,
) -> CvResult:
    """Cross-validated PAPD between two learners under budget ``p``."""
    spec = MetricSpec(kind=Metric.PAPD_BUDGET, budget=p)
    return crossval(data, learner_f, spec, K, seed, learner_g, max_workers=max_workers)


def cv_aupec(
    data: ExperimentData,
    learner: LearnerSpec,
    c_star: float,
    K: int,
    seed: int,
    *,
    max_workers: int | None = 1,
    z_mode: ZMode = ZMode.MONTE_CARLO,
    draws: int = DEFAULT_MC_DRAWS,
) -> CvResult:
    """Cross-validated AUPEC of a learner's scoring rules."""
    spec = MetricSpec(kind=Metric.AUPEC, c_star=c_star)
    return crossval(
        data, learner, spec, K, seed, max_workers=max_workers, z_mode=z_mode, draws=draws
    )
