"""Ground truth for populations with both potential outcomes known.

Population metrics are finite-population averages over the units of a
:class:`PotentialPopulation`. ``enumerate_randomizations`` evaluates an
estimator under every complete randomization of the population, giving
its exact randomization mean and variance.
"""

from __future__ import annotations

import itertools
import logging
from collections.abc import Callable
from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy.special import comb

from .config import ENUMERATION_LIMIT, EXACT_POLYNOMIAL_MAX_N
from .core.errors import InputError, NumericDegeneracyError, SizeGuardError
from .core.models import ExperimentData, Metric, MetricSpec, PotentialPopulation, Rule
from .core.parallel import run_ordered
from .core.rules import assignments, rank_order
from .estimation.fixed import aupec_weights, estimate_metric
from .estimation.variance import ZMode

logger = logging.getLogger(__name__)

# Assignments evaluated per work unit when enumerating in parallel
ENUMERATION_BLOCK = 4_096

Estimator = Callable[[ExperimentData], float]


# ======================================================================
# Population metrics
# ======================================================================


def _population_rule(pop: PotentialPopulation, rule: Rule | None) -> Rule:
    if rule is None:
        if pop.scores is None:
            raise InputError("population has no scores; pass a rule")
        rule = Rule.scoring(pop.scores)
    if rule.n != pop.n:
        raise InputError(f"rule covers {rule.n} units but the population has {pop.n}")
    return rule


def _value(pop: PotentialPopulation, f: np.ndarray) -> float:
    return float(np.mean(f * pop.y1 + (1 - f) * pop.y0))


def _curve_sum(pop: PotentialPopulation, rule: Rule, c_star: float) -> tuple[float, float]:
    """(sum_i w_i tau_i / n, p_f): the effect part of the curve area and its plateau height."""
    w, n_f = aupec_weights(rule, c_star)
    return float(np.mean(w * pop.tau)), n_f / pop.n


def true_metric(
    pop: PotentialPopulation,
    rule: Rule | None,
    metric_spec: MetricSpec,
    rule_g: Rule | None = None,
) -> float:
    """Exact value of a metric on a finite population.

    Args:
        pop: Population with both potential outcomes.
        rule: Rule evaluated; defaults to a scoring rule on ``pop.scores``.
        metric_spec: Metric with its budget or ``c_star``.
        rule_g: Comparison rule for PAPD and value differences.

    Returns:
        The population value of the metric. The AUPEC is the right Riemann
        sum over budgets k / n, k = 1..n_f, plus the flat part of the curve
        beyond ``p_f``.

    Raises:
        NumericDegeneracyError: For the normalized AUPEC when the average
            treatment effect is zero.
    """
    rule = _population_rule(pop, rule)
    kind = metric_spec.kind
    if rule.is_scoring and metric_spec.budget is None:
        rule = Rule.scoring(rule.values, c_star=metric_spec.c_star)
    if rule_g is not None and rule_g.is_scoring and metric_spec.budget is None:
        rule_g = Rule.scoring(rule_g.values, c_star=metric_spec.c_star)
    mean_y1 = float(pop.y1.mean())
    mean_y0 = float(pop.y0.mean())

    if kind is Metric.PAV:
        return _value(pop, assignments(rule))
    if kind in (Metric.PAPE, Metric.SAPE):
        f = assignments(rule)
        p_f = float(f.mean())
        return _value(pop, f) - p_f * mean_y1 - (1 - p_f) * mean_y0
    if kind is Metric.PAPE_BUDGET:
        p = metric_spec.budget
        f = assignments(rule, p)
        return _value(pop, f) - p * mean_y1 - (1 - p) * mean_y0  # type: ignore[operator]
    if kind in (Metric.PAPD_BUDGET, Metric.VALUE_DIFF):
        if rule_g is None:
            raise InputError(f"{kind.value} needs a comparison rule")
        f = assignments(rule, metric_spec.budget)
        g = assignments(rule_g, metric_spec.budget)
        return float(np.mean((f - g) * pop.tau))

    if not rule.is_scoring:
        raise InputError("AUPEC requires a scoring rule")
    area, _ = _curve_sum(pop, rule, metric_spec.c_star)
    if kind is Metric.AUPEC:
        return mean_y0 + area - 0.5 * (mean_y0 + mean_y1)
    ate = mean_y1 - mean_y0
    if ate == 0:
        raise NumericDegeneracyError("population ATE is zero; the normalized AUPEC is undefined")
    return area / ate - 0.5


def true_qini(pop: PotentialPopulation, scores: np.ndarray | None = None) -> float:
    """QINI coefficient of a scoring rule by direct summation over its top-k groups.

    ``n * [(1/n) sum_k (1/n) sum_{top k} tau_i - tau_bar / 2]``; divided by n
    it equals the population AUPEC with ``c_star = -inf``.
    """
    scores = pop.scores if scores is None else np.asarray(scores, dtype=np.float64)
    if scores is None:
        raise InputError("population has no scores")
    n = pop.n
    ordered = pop.tau[rank_order(scores)]
    total = 0.0
    for k in range(1, n + 1):
        total += ordered[:k].sum() / n
    return n * (total / n - 0.5 * float(pop.tau.mean()))


def sape_variance(
    pop: PotentialPopulation, f: np.ndarray, n1: int, p: float | None = None
) -> float:
    """Randomization variance of the SAPE estimator for a fixed assignment ``f``.

    ``(1/n) (n0/n1 S1^2 + n1/n0 S0^2 + 2 S01)`` for the transformed outcomes
    ``(f_i - p) Y_i(t)``, with ``p`` defaulting to the mean of ``f``. With
    ``f`` the top ``floor(n p)`` units and the budget ``p`` supplied, this is
    also the exact variance of the budgeted PAPE estimator.
    """
    f = np.asarray(f, dtype=np.float64)
    n = pop.n
    if f.shape != (n,):
        raise InputError(f"f must have length {n}")
    if not 0 < n1 < n:
        raise InputError(f"n1 must be in 1..{n - 1}, got {n1}")
    n0 = n - n1
    p = float(f.mean()) if p is None else p
    y1 = (f - p) * pop.y1
    y0 = (f - p) * pop.y0
    s1 = float(np.var(y1, ddof=1))
    s0 = float(np.var(y0, ddof=1))
    s01 = float(np.cov(y1, y0, ddof=1)[0, 1])
    return (n0 / n1 * s1 + n1 / n0 * s0 + 2 * s01) / n


# ======================================================================
# Exhaustive randomization
# ======================================================================


@dataclass(frozen=True, eq=False)
class RandomizationDistribution:
    """Estimator values under every complete randomization, in lexicographic order."""

    values: np.ndarray

    @property
    def count(self) -> int:
        return int(self.values.size)

    @property
    def mean(self) -> float:
        return float(self.values.mean())

    @property
    def variance(self) -> float:
        """Exact randomization variance (every assignment equally likely)."""
        return float(self.values.var(ddof=0))

    def exceedance(self, center: float, epsilon: float) -> float:
        """Share of assignments whose value is at least ``epsilon`` from ``center``."""
        return float(np.mean(np.abs(self.values - center) >= epsilon))


def metric_estimator(
    spec: MetricSpec, rule: Rule, rule_g: Rule | None = None
) -> Callable[[ExperimentData], float]:
    """Point estimator of ``spec`` for fixed rules, as a function of observed data."""
    z_mode = ZMode.EXACT if rule.n <= EXACT_POLYNOMIAL_MAX_N else ZMode.MONTE_CARLO
    return _MetricPoint(spec, rule, rule_g, z_mode)


@dataclass(frozen=True)
class _MetricPoint:
    spec: MetricSpec
    rule: Rule
    rule_g: Rule | None
    z_mode: ZMode

    def __call__(self, data: ExperimentData) -> float:
        estimate = estimate_metric(
            data, self.spec, self.rule, self.rule_g, z_mode=self.z_mode, draws=1
        )
        return estimate.point


def _evaluate_block(args: tuple[Any, ...]) -> np.ndarray:
    pop, n1, start, stop, estimator = args
    values = []
    t = np.zeros(pop.n, dtype=np.int8)
    for treated in itertools.islice(itertools.combinations(range(pop.n), n1), start, stop):
        t[:] = 0
        t[list(treated)] = 1
        values.append(estimator(pop.observe(t)))
    return np.asarray(values, dtype=np.float64)


def enumerate_randomizations(
    pop: PotentialPopulation,
    n1: int,
    estimator: Estimator | MetricSpec,
    rule: Rule | None = None,
    rule_g: Rule | None = None,
    *,
    max_workers: int | None = 1,
) -> RandomizationDistribution:
    """Evaluate an estimator under every assignment treating exactly ``n1`` units.

    Args:
        pop: Population with both potential outcomes.
        n1: Number of treated units per assignment.
        estimator: A function from observed data to a number, or a metric
            whose point estimator is used with ``rule`` (default: the
            population's scores) and ``rule_g``.
        rule: Rule for a metric estimator.
        rule_g: Comparison rule for a metric estimator.
        max_workers: Process pool size over blocks of assignments. Values
            are returned in lexicographic assignment order regardless.

    Raises:
        InputError: If ``n1`` leaves an arm empty.
        SizeGuardError: If there are more than ``ENUMERATION_LIMIT`` assignments.
    """
    n = pop.n
    if not 0 < n1 < n:
        raise InputError(f"n1 must be in 1..{n - 1}, got {n1}")
    total = int(comb(n, n1, exact=True))
    if total > ENUMERATION_LIMIT:
        raise SizeGuardError(
            f"C({n}, {n1}) = {total} assignments exceeds the limit of {ENUMERATION_LIMIT}"
        )
    if isinstance(estimator, MetricSpec):
        estimator = metric_estimator(estimator, _population_rule(pop, rule), rule_g)

    logger.debug("Enumerating %d assignments of %d units", total, n)
    bounds = range(0, total, ENUMERATION_BLOCK)
    args_list = [
        (pop, n1, start, min(start + ENUMERATION_BLOCK, total), estimator) for start in bounds
    ]
    blocks = run_ordered(_evaluate_block, args_list, max_workers=max_workers)
    values = np.concatenate(blocks)
    if not np.all(np.isfinite(values)):
        logger.warning("Estimator returned non-finite values for some assignments")
    return RandomizationDistribution(values=values)


def exact_bias(distribution: RandomizationDistribution, truth: float) -> float:
    """Randomization mean minus the true value."""
    return distribution.mean - truth
