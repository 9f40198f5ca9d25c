"""Estimators for pre-specified treatment rules.

Every estimator takes the observed experiment and a rule, and returns a
:class:`MetricEstimate` whose standard error comes from the exact
finite-sample variance of that estimator under complete randomization,
with unknown population terms replaced by sample analogues.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ..config import DEFAULT_MC_DRAWS, NORMALIZATION_TOLERANCE
from ..core.errors import DegenerateDataError, InputError, NumericDegeneracyError
from ..core.models import ExperimentData, Metric, MetricEstimate, MetricSpec, Rule
from ..core.rules import assignments, budget_count, ranks, threshold_for_budget
from .variance import (
    KappaProfile,
    ZMode,
    ZMomentEngine,
    arm_variances,
    bias_bound_aupec,
    bias_bound_papd,
    bias_bound_pape_budget,
    budget_kappa_term,
    finalize_variance,
    kappa_profile,
    neyman_terms,
    papd_cov_bound,
)

logger = logging.getLogger(__name__)


class CurvePoint(NamedTuple):
    """One budget on the prescriptive effect curve."""

    budget: float
    value: float
    pape: float
    std_error: float


@dataclass(frozen=True)
class AupecCurve:
    """AUPEC estimate together with the curve it integrates."""

    points: list[CurvePoint]
    aupec: MetricEstimate
    p_f_hat: float


def _check_inputs(data: ExperimentData, *rules: Rule) -> None:
    data.require_arms(minimum=1)
    for rule in rules:
        if rule.n != data.n:
            raise InputError(f"rule covers {rule.n} units but the experiment has {data.n}")


def _arm_means(values: np.ndarray, data: ExperimentData) -> tuple[float, float]:
    treated = data.treated
    return float(values[treated].mean()), float(values[~treated].mean())


def _value(data: ExperimentData, f: np.ndarray) -> float:
    """Estimated average outcome if units followed the assignment ``f``."""
    treated_part, _ = _arm_means(data.y * f, data)
    _, control_part = _arm_means(data.y * (1 - f), data)
    return treated_part + control_part


def _result(
    metric: Metric,
    point: float,
    variance: float,
    data: ExperimentData,
    proportion: float,
    diagnostics: dict[str, float],
    budget: float | None = None,
) -> MetricEstimate:
    std_error = finalize_variance(variance, diagnostics)
    return MetricEstimate(
        metric=metric,
        point=point,
        std_error=std_error,
        n_used=data.n,
        n1=data.n1,
        n0=data.n0,
        proportion_treated=proportion,
        budget=budget,
        diagnostics=diagnostics,
    )


# ----------------------------------------------------------------------
# Budget-free rules
# ----------------------------------------------------------------------


def estimate_pav(data: ExperimentData, rule: Rule) -> MetricEstimate:
    """Population average value of a rule.

    The point estimate averages treated outcomes of units the rule treats
    and control outcomes of units it does not, each over its own arm.

    Args:
        data: Observed experiment.
        rule: Fixed rule, or scoring rule thresholded at its ``c_star``.

    Returns:
        MetricEstimate tagged PAV. The standard error is NaN when an arm
        has fewer than two units.
    """
    _check_inputs(data, rule)
    f = assignments(rule)
    point = _value(data, f)
    per_unit = np.where(data.treated, f * data.y, (1 - f) * data.y)
    diagnostics: dict[str, float] = {}
    return _result(
        Metric.PAV, point, neyman_terms(per_unit, data), data, float(f.mean()), diagnostics
    )


def _pape_parts(data: ExperimentData, f: np.ndarray) -> tuple[float, float, float, float]:
    """(SAPE-scale point, p_hat, S~1^2, S~0^2) for a budget-free assignment."""
    p_hat = float(f.mean())
    point = _value(data, f) - p_hat * data.treated_mean - (1 - p_hat) * data.control_mean
    s1, s0 = arm_variances((f - p_hat) * data.y, data)
    return point, p_hat, s1, s0


def estimate_pape(data: ExperimentData, rule: Rule) -> MetricEstimate:
    """Population average prescriptive effect of a budget-free rule.

    Compares the rule with a random rule treating the same proportion of
    units, including the ``n / (n - 1)`` small-sample correction.
    """
    _check_inputs(data, rule)
    n = data.n
    if n < 2:
        raise DegenerateDataError("PAPE needs at least two units")
    f = assignments(rule)
    sape_point, p_hat, s1, s0 = _pape_parts(data, f)
    correction = n / (n - 1)
    point = correction * sape_point

    tau = data.ate
    threshold_term = (
        point**2 - n * p_hat * (1 - p_hat) * tau**2 + 2 * (n - 1) * (2 * p_hat - 1) * point * tau
    ) / n**2
    variance = correction**2 * (s1 / data.n1 + s0 / data.n0 + threshold_term)
    diagnostics = {"p_hat": p_hat, "tau_hat": tau}
    return _result(Metric.PAPE, point, variance, data, p_hat, diagnostics)


def estimate_sape(data: ExperimentData, rule: Rule) -> MetricEstimate:
    """Sample average prescriptive effect of a budget-free rule.

    The point is the PAPE estimate without the ``n / (n - 1)`` factor. Its
    variance uses the finite-population randomization formula with the
    unidentified cross-arm covariance replaced by the Cauchy-Schwarz bound,
    so the standard error is conservative.
    """
    _check_inputs(data, rule)
    f = assignments(rule)
    point, p_hat, s1, s0 = _pape_parts(data, f)
    n, n1, n0 = data.n, data.n1, data.n0
    cross = math.sqrt(s1 * s0) if not (math.isnan(s1) or math.isnan(s0)) else math.nan
    variance = (n0 / n1 * s1 + n1 / n0 * s0 + 2 * cross) / n
    return _result(Metric.SAPE, point, variance, data, p_hat, {"p_hat": p_hat})


def value_difference(data: ExperimentData, rule_f: Rule, rule_g: Rule) -> MetricEstimate:
    """Difference between the average values of two budget-free rules.

    This is the budgeted PAPD variance with the budget terms absent: with
    no estimated thresholds neither the ``p`` centering nor the kappa
    covariance appears, leaving the within-arm variances of ``(f - g) * y``.
    """
    _check_inputs(data, rule_f, rule_g)
    f = assignments(rule_f)
    g = assignments(rule_g)
    point = estimate_pav(data, rule_f).point - estimate_pav(data, rule_g).point
    variance = neyman_terms((f - g) * data.y, data)
    diagnostics = {"p_hat_f": float(f.mean()), "p_hat_g": float(g.mean())}
    return _result(Metric.VALUE_DIFF, point, variance, data, float(f.mean()), diagnostics)


# ----------------------------------------------------------------------
# Budgeted rules
# ----------------------------------------------------------------------


def _budget_kappas(
    data: ExperimentData, rule: Rule, k: int, profile: KappaProfile | None = None
) -> tuple[float, float, bool]:
    """Kappa pair at budget k / n, or NaNs when no profile can be formed."""
    if profile is None:
        try:
            profile = kappa_profile(data, rule)
        except DegenerateDataError:
            logger.warning("Kappa terms not estimable for this rule; variance unavailable")
            return math.nan, math.nan, False
    kappa1, kappa0 = profile.at(k)
    substituted = profile.substituted(k) and 0 < k < data.n
    if substituted:
        logger.debug("Kappa substituted at z=%d (z_min=%d, z_max=%d)", k, profile.z_min, profile.z_max)
    return kappa1, kappa0, substituted


def _pape_budget_parts(
    data: ExperimentData, rule: Rule, p: float, profile: KappaProfile | None = None
) -> tuple[float, float, dict[str, float]]:
    n = data.n
    k = budget_count(n, p)
    f = assignments(rule, p)
    point = _value(data, f) - p * data.treated_mean - (1 - p) * data.control_mean
    variance = neyman_terms((f - p) * data.y, data)

    diagnostics: dict[str, float] = {}
    if 0 < k < n:
        kappa1, kappa0, substituted = _budget_kappas(data, rule, k, profile)
        variance += budget_kappa_term(n, k, p, kappa1, kappa0)
        diagnostics.update(kappa_treated=kappa1, kappa_untreated=kappa0)
        if substituted:
            diagnostics["kappa_substituted"] = 1.0
    return point, variance, diagnostics


def estimate_pape_budget(data: ExperimentData, rule: Rule, p: float) -> MetricEstimate:
    """PAPE of a scoring rule that may treat at most a proportion ``p`` of units.

    The rule treats the ``floor(n p)`` top-scored units; the baseline is a
    random rule treating a proportion ``p``. The variance adds the
    threshold-estimation term driven by the kappa plug-ins at the budget.

    Args:
        data: Observed experiment.
        rule: Scoring rule.
        p: Budget in [0, 1].

    Returns:
        MetricEstimate tagged PAPE_BUDGET.
    """
    _check_inputs(data, rule)
    if data.n < 2:
        raise DegenerateDataError("a budgeted PAPE needs at least two units")
    threshold, treated = threshold_for_budget(rule, p)
    point, variance, diagnostics = _pape_budget_parts(data, rule, p)
    diagnostics["threshold"] = threshold
    proportion = len(treated) / data.n
    return _result(Metric.PAPE_BUDGET, point, variance, data, proportion, diagnostics, budget=p)


def estimate_papd_budget(
    data: ExperimentData, rule_f: Rule, rule_g: Rule, p: float
) -> MetricEstimate:
    """Difference in budgeted PAPE between two scoring rules.

    Antisymmetric in ``(rule_f, rule_g)``. The variance uses the conservative
    bound on the covariance of the two estimated thresholds.
    """
    _check_inputs(data, rule_f, rule_g)
    n = data.n
    if n < 2:
        raise DegenerateDataError("a budgeted PAPD needs at least two units")
    k = budget_count(n, p)
    f = assignments(rule_f, p)
    g = assignments(rule_g, p)
    diff = f - g
    treated_part, _ = _arm_means(data.y * diff, data)
    _, control_part = _arm_means(data.y * -diff, data)
    point = treated_part + control_part

    variance = neyman_terms(diff * data.y, data)
    diagnostics: dict[str, float] = {}
    if 0 < k < n:
        kf1, _, sub_f = _budget_kappas(data, rule_f, k)
        kg1, _, sub_g = _budget_kappas(data, rule_g, k)
        variance += k * (k - n) / (n**2 * (n - 1)) * (kf1**2 + kg1**2)
        variance += 2 * papd_cov_bound(n, p, kf1, kg1)
        diagnostics.update(kappa_f_treated=kf1, kappa_g_treated=kg1)
        if sub_f or sub_g:
            diagnostics["kappa_substituted"] = 1.0
    return _result(Metric.PAPD_BUDGET, point, variance, data, k / n, diagnostics, budget=p)


# ----------------------------------------------------------------------
# Area under the prescriptive effect curve
# ----------------------------------------------------------------------


def aupec_weights(rule: Rule, c_star: float) -> tuple[np.ndarray, int]:
    """Per-unit curve weights and the number of units scoring above ``c_star``.

    Weight ``w_i`` is the share of the budget grid ``k / n`` (k = 1..n_f,
    then flat at ``n_f / n``) over which unit i is treated.
    """
    n = rule.n
    n_f = int(np.sum(rule.values > c_star))
    r = ranks(rule.values)
    inside = r <= n_f
    w = (np.maximum(0, n_f - r + 1) + (n - n_f) * inside) / n
    return w, n_f


def _aupec_estimate(
    data: ExperimentData,
    rule: Rule,
    c_star: float,
    z_mode: ZMode,
    draws: int,
    seed: int,
    profile: KappaProfile | None,
) -> MetricEstimate:
    n = data.n
    w, n_f = aupec_weights(rule, c_star)
    p_f = n_f / n
    treated_part, _ = _arm_means(data.y * w, data)
    _, control_part = _arm_means(data.y * (1 - w), data)
    point = treated_part + control_part - 0.5 * data.treated_mean - 0.5 * data.control_mean

    variance = neyman_terms((w - 0.5) * data.y, data)
    diagnostics: dict[str, float] = {"p_hat": p_f}
    if profile is None:
        logger.warning("Kappa profile not estimable; AUPEC variance unavailable")
        variance = math.nan
    else:
        engine = ZMomentEngine(
            n=n,
            p_hat=p_f,
            kappa_treated=profile.treated,
            kappa_untreated=profile.untreated,
            mode=z_mode,
            draws=draws,
            seed=seed,
        )
        terms = engine.terms()
        variance += terms.expectation_term + terms.variance_term
        diagnostics.update(
            z_expectation=terms.expectation_term,
            z_variance=terms.variance_term,
            z_min=float(profile.z_min),
            z_max=float(profile.z_max),
        )
        diagnostics["kappa_treated"], diagnostics["kappa_untreated"] = profile.at(n_f)
    return _result(Metric.AUPEC, point, variance, data, p_f, diagnostics)


def estimate_aupec(
    data: ExperimentData,
    rule: Rule,
    c_star: float | None = None,
    *,
    z_mode: ZMode = ZMode.MONTE_CARLO,
    draws: int = DEFAULT_MC_DRAWS,
    seed: int = 0,
    with_curve: bool = True,
    outcome_shift: float = 0.0,
) -> AupecCurve:
    """Area under the prescriptive effect curve of a scoring rule.

    Args:
        data: Observed experiment.
        rule: Scoring rule.
        c_star: Minimum score treated; defaults to ``rule.c_star``.
        z_mode: Evaluation of the binomial Z moments in the variance.
        draws: Monte Carlo draws of Z.
        seed: Monte Carlo seed.
        with_curve: Also compute the budgeted PAPE at every k / n.
        outcome_shift: Constant already added to ``data.y`` by centering.
            Curve values are reported on the original outcome scale; the
            PAPE points and the AUPEC do not depend on it.

    Returns:
        AupecCurve with the AUPEC estimate and, if requested, one curve
        point per budget k / n, k = 1..n.
    """
    _check_inputs(data, rule)
    if not rule.is_scoring:
        raise InputError("AUPEC requires a scoring rule")
    if data.n < 2:
        raise DegenerateDataError("AUPEC needs at least two units")
    c_star = rule.c_star if c_star is None else c_star
    try:
        profile: KappaProfile | None = kappa_profile(data, rule)
    except DegenerateDataError:
        profile = None
    aupec = _aupec_estimate(data, rule, c_star, z_mode, draws, seed, profile)

    points: list[CurvePoint] = []
    if with_curve:
        n = data.n
        original = data.with_outcomes(data.y - outcome_shift) if outcome_shift else data
        for k in range(1, n + 1):
            p = k / n
            pape, variance, diagnostics = _pape_budget_parts(data, rule, p, profile)
            std_error = finalize_variance(variance, diagnostics)
            value = _value(original, assignments(rule, p))
            points.append(CurvePoint(p, value, pape, std_error))
    return AupecCurve(points=points, aupec=aupec, p_f_hat=aupec.proportion_treated)


def estimate_aupec_normalized(
    data: ExperimentData, rule: Rule, c_star: float | None = None
) -> MetricEstimate:
    """Scale-invariant AUPEC: the curve area divided by the estimated ATE.

    The standard error is a first-order delta-method approximation that
    treats the numerator and the ATE as linear statistics of the same
    per-unit terms.

    Raises:
        NumericDegeneracyError: If the estimated ATE is numerically zero.
    """
    _check_inputs(data, rule)
    if not rule.is_scoring:
        raise InputError("AUPEC requires a scoring rule")
    c_star = rule.c_star if c_star is None else c_star
    tau = data.ate
    if abs(tau) < NORMALIZATION_TOLERANCE * data.outcome_scale:
        raise NumericDegeneracyError(
            f"estimated ATE {tau:.3g} is too close to zero to normalize the AUPEC"
        )
    w, n_f = aupec_weights(rule, c_star)
    weighted = w * data.y
    num_t, num_c = _arm_means(weighted, data)
    numerator = num_t - num_c
    ratio = numerator / tau
    point = ratio - 0.5

    treated = data.treated
    n1, n0 = data.n1, data.n0

    def arm_cov(a: np.ndarray, b: np.ndarray, mask: np.ndarray, size: int) -> float:
        if size < 2:
            return math.nan
        return float(np.cov(a[mask], b[mask], ddof=1)[0, 1])

    var_num = neyman_terms(weighted, data)
    var_tau = neyman_terms(data.y, data)
    cov = (
        arm_cov(weighted, data.y, treated, n1) / n1
        + arm_cov(weighted, data.y, ~treated, n0) / n0
    )
    variance = (var_num - 2 * ratio * cov + ratio**2 * var_tau) / tau**2
    diagnostics = {"p_hat": n_f / data.n, "tau_hat": tau, "numerator": numerator}
    return _result(Metric.AUPEC_NORM, point, variance, data, n_f / data.n, diagnostics)


# ----------------------------------------------------------------------
# Dispatch and bias bounds
# ----------------------------------------------------------------------


def estimate_metric(
    data: ExperimentData,
    spec: MetricSpec,
    rule: Rule,
    rule_g: Rule | None = None,
    *,
    z_mode: ZMode = ZMode.MONTE_CARLO,
    draws: int = DEFAULT_MC_DRAWS,
    seed: int = 0,
) -> MetricEstimate:
    """Estimate the metric described by ``spec`` for ``rule``.

    ``rule_g`` is the comparison rule for PAPD and value differences. A
    scoring rule's own ``c_star`` is replaced by ``spec.c_star`` for the
    budget-free metrics.
    """
    kind = spec.kind
    if rule.is_scoring and spec.budget is None:
        rule = Rule.scoring(rule.values, c_star=spec.c_star)
    if kind in (Metric.PAPD_BUDGET, Metric.VALUE_DIFF) and rule_g is None:
        raise InputError(f"{kind.value} needs a comparison rule")

    if kind is Metric.PAV:
        return estimate_pav(data, rule)
    if kind is Metric.PAPE:
        return estimate_pape(data, rule)
    if kind is Metric.SAPE:
        return estimate_sape(data, rule)
    if kind is Metric.PAPE_BUDGET:
        return estimate_pape_budget(data, rule, spec.budget)  # type: ignore[arg-type]
    if kind is Metric.PAPD_BUDGET:
        return estimate_papd_budget(data, rule, rule_g, spec.budget)  # type: ignore[arg-type]
    if kind is Metric.VALUE_DIFF:
        if rule_g is not None and rule_g.is_scoring:
            rule_g = Rule.scoring(rule_g.values, c_star=spec.c_star)
        return value_difference(data, rule, rule_g)  # type: ignore[arg-type]
    if kind is Metric.AUPEC:
        curve = estimate_aupec(
            data, rule, spec.c_star, z_mode=z_mode, draws=draws, seed=seed, with_curve=False
        )
        return curve.aupec
    return estimate_aupec_normalized(data, rule, spec.c_star)


def attach_bias_bound(
    estimate: MetricEstimate, epsilon: float, cate_cap: float | None = None
) -> MetricEstimate:
    """Copy of ``estimate`` with its threshold-estimation bias bound in the diagnostics.

    Without ``cate_cap`` the plug-in cap ``max(|kappa_1|, |kappa_0|)`` at the
    threshold is used and ``bias_cap_plugin`` is set. Metrics without an
    estimated threshold, or with a zero plug-in cap, are returned unchanged.
    """
    diagnostics = estimate.diagnostics
    plug_in = cate_cap is None
    if plug_in:
        kappas = [
            abs(diagnostics[key])
            for key in ("kappa_treated", "kappa_untreated", "kappa_f_treated", "kappa_g_treated")
            if key in diagnostics and not math.isnan(diagnostics[key])
        ]
        cate_cap = max(kappas, default=0.0)
        if cate_cap <= 0:
            return estimate

    n = estimate.n_used
    if estimate.metric is Metric.PAPE_BUDGET:
        bound = bias_bound_pape_budget(n, estimate.budget, epsilon, cate_cap)  # type: ignore[arg-type]
    elif estimate.metric is Metric.PAPD_BUDGET:
        bound = bias_bound_papd(n, estimate.budget, epsilon, cate_cap)  # type: ignore[arg-type]
    elif estimate.metric is Metric.AUPEC:
        bound = bias_bound_aupec(n, estimate.proportion_treated, epsilon, cate_cap)
    else:
        return estimate

    updated = dict(diagnostics)
    updated.update(
        bias_epsilon=epsilon,
        bias_bound=bound.probability_bound,
        bias_gamma=bound.gamma,
        bias_cap=bound.cate_cap,
        bias_cap_plugin=1.0 if plug_in else 0.0,
    )
    return estimate.model_copy(update={"diagnostics": updated})
