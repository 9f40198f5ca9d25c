"""Tests for the fixed-rule estimators."""

import math

import numpy as np
import pytest

from itr_eval.core.data import center_outcomes
from itr_eval.core.errors import InputError, NumericDegeneracyError
from itr_eval.core.models import ExperimentData, Metric, MetricSpec, Rule
from itr_eval.core.rules import top_k
from itr_eval.estimation.fixed import (
    attach_bias_bound,
    aupec_weights,
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
from tests.conftest import make_experiment


def _direct_curve_sum(data, scores):
    """Average over k of the estimated value of treating the top k units, minus the midpoint."""
    n = data.n
    treated = data.treated
    total = 0.0
    for k in range(1, n + 1):
        f = top_k(scores, k)
        total += np.mean(data.y[treated] * f[treated])
        total += np.mean(data.y[~treated] * (1 - f[~treated]))
    return total / n - 0.5 * (data.treated_mean + data.control_mean)


class TestPav:
    def test_worked_example(self, example, example_rule):
        """PAV of the worked example is exactly 1/6."""
        estimate = estimate_pav(example, example_rule)
        assert estimate.metric is Metric.PAV
        assert estimate.point == pytest.approx(1 / 6, abs=1e-12)
        assert estimate.proportion_treated == pytest.approx(0.4)

    def test_not_shift_invariant(self, example, example_rule):
        """Adding 1 to every outcome moves the PAV from 1/6 to 1."""
        shifted = example.with_outcomes(example.y + 1.0)
        assert estimate_pav(shifted, example_rule).point == pytest.approx(1.0, abs=1e-12)

    def test_treat_everyone(self, example):
        estimate = estimate_pav(example, Rule.fixed([1, 1, 1, 1, 1]))
        assert estimate.point == pytest.approx(8 / 3)

    def test_std_error_finite(self, example, example_rule):
        assert math.isfinite(estimate_pav(example, example_rule).std_error)

    def test_rule_length_mismatch(self, example):
        with pytest.raises(InputError):
            estimate_pav(example, Rule.fixed([1, 0]))


class TestPape:
    def test_worked_example(self, example, example_rule):
        """PAPE applies the n/(n-1) correction to the SAPE-scale point of -0.9."""
        assert estimate_pape(example, example_rule).point == pytest.approx(-1.125)
        assert estimate_sape(example, example_rule).point == pytest.approx(-0.9)

    def test_treat_everyone_has_zero_effect(self, example):
        assert estimate_pape(example, Rule.fixed([1, 1, 1, 1, 1])).point == pytest.approx(0.0)

    def test_diagnostics(self, example, example_rule):
        diagnostics = estimate_pape(example, example_rule).diagnostics
        assert diagnostics["p_hat"] == pytest.approx(0.4)
        assert diagnostics["tau_hat"] == pytest.approx(8 / 3)


class TestPapeBudget:
    def test_worked_example(self, example, example_scores):
        """Scores 5..1 under budget 0.4 treat units A and B; the PAPE is 0.6."""
        estimate = estimate_pape_budget(example, example_scores, 0.4)
        assert estimate.metric is Metric.PAPE_BUDGET
        assert estimate.point == pytest.approx(0.6)
        assert estimate.budget == 0.4
        assert estimate.proportion_treated == pytest.approx(0.4)
        assert estimate.diagnostics["threshold"] == 3.0

    def test_zero_budget(self, experiment):
        rule = Rule.scoring(experiment.x[:, 0])
        estimate = estimate_pape_budget(experiment, rule, 0.0)
        assert estimate.point == pytest.approx(0.0, abs=1e-12)

    def test_kappa_diagnostics(self, experiment):
        estimate = estimate_pape_budget(experiment, Rule.scoring(experiment.x[:, 0]), 0.3)
        assert "kappa_treated" in estimate.diagnostics
        assert "kappa_untreated" in estimate.diagnostics
        assert math.isfinite(estimate.std_error)

    def test_fixed_rule_rejected(self, example, example_rule):
        with pytest.raises(InputError):
            estimate_pape_budget(example, example_rule, 0.4)


class TestPapd:
    def test_worked_example(self, example, example_scores):
        """f treats {A, B}, g treats {D, E}; the PAPD is 7/6."""
        rule_g = Rule.scoring([1.0, 2.0, 3.0, 4.0, 5.0])
        estimate = estimate_papd_budget(example, example_scores, rule_g, 0.4)
        assert estimate.point == pytest.approx(7 / 6)

    def test_antisymmetric(self, experiment):
        f = Rule.scoring(experiment.x[:, 0])
        g = Rule.scoring(experiment.x[:, 1])
        forward = estimate_papd_budget(experiment, f, g, 0.3)
        backward = estimate_papd_budget(experiment, g, f, 0.3)
        assert forward.point == pytest.approx(-backward.point)
        assert forward.std_error == pytest.approx(backward.std_error)

    def test_same_rule_is_zero(self, experiment):
        f = Rule.scoring(experiment.x[:, 0])
        assert estimate_papd_budget(experiment, f, f, 0.5).point == 0.0


class TestValueDifference:
    def test_worked_example(self, example, example_rule):
        """1/6 - 8/3 = -5/2."""
        estimate = value_difference(example, example_rule, Rule.fixed([1, 1, 1, 1, 1]))
        assert estimate.metric is Metric.VALUE_DIFF
        assert estimate.point == pytest.approx(-2.5)


class TestAupec:
    def test_weights_with_floor(self):
        """Units above c_star keep their treatment on the flat part of the curve."""
        w, n_f = aupec_weights(Rule.scoring([5.0, 4.0, 3.0, 2.0, 1.0]), 2.5)
        assert n_f == 3
        assert list(w) == pytest.approx([1.0, 0.8, 0.6, 0.0, 0.0])

    def test_matches_direct_summation(self):
        """With no floor the estimate equals the literal top-k summation."""
        for seed in range(100):
            data = make_experiment(n=30, seed=seed)
            scores = np.random.default_rng(seed + 1000).normal(size=data.n)
            curve = estimate_aupec(data, Rule.scoring(scores), -math.inf, draws=1, with_curve=False)
            expected = _direct_curve_sum(data, scores)
            assert curve.aupec.point == pytest.approx(expected, rel=1e-10, abs=1e-12)

    def test_curve_points(self, experiment):
        curve = estimate_aupec(experiment, Rule.scoring(experiment.x[:, 0]), draws=100)
        budgets = [point.budget for point in curve.points]
        assert len(budgets) == experiment.n
        assert budgets == sorted(budgets)
        assert budgets[-1] == pytest.approx(1.0)
        assert curve.points[-1].pape == pytest.approx(0.0, abs=1e-12)

    def test_curve_average_matches_point(self, experiment):
        """The mean curve value minus the midpoint is the AUPEC without a floor."""
        curve = estimate_aupec(experiment, Rule.scoring(experiment.x[:, 0]), draws=100)
        average = np.mean([point.value for point in curve.points])
        midpoint = 0.5 * (experiment.treated_mean + experiment.control_mean)
        assert curve.aupec.point == pytest.approx(average - midpoint)

    def test_curve_values_undo_centering(self, example, example_scores):
        centered, delta = center_outcomes(example)
        raw = estimate_aupec(example, example_scores, draws=10)
        shifted = estimate_aupec(centered, example_scores, draws=10, outcome_shift=delta)
        assert [pt.value for pt in shifted.points] == pytest.approx(
            [pt.value for pt in raw.points]
        )
        assert shifted.points[-1].value == pytest.approx(8 / 3)
        assert shifted.points[1].pape == pytest.approx(-13 / 45)

    def test_monte_carlo_seed_reproducible(self, experiment):
        rule = Rule.scoring(experiment.x[:, 0])
        first = estimate_aupec(experiment, rule, draws=500, seed=4, with_curve=False)
        second = estimate_aupec(experiment, rule, draws=500, seed=4, with_curve=False)
        assert first.aupec.std_error == second.aupec.std_error

    def test_fixed_rule_rejected(self, example, example_rule):
        with pytest.raises(InputError):
            estimate_aupec(example, example_rule)


class TestNormalizedAupec:
    def test_scale_invariant(self, experiment):
        rule = Rule.scoring(experiment.x[:, 0])
        scaled = experiment.with_outcomes(3.0 * experiment.y)
        original = estimate_aupec_normalized(experiment, rule)
        assert estimate_aupec_normalized(scaled, rule).point == pytest.approx(original.point)

    def test_zero_ate(self):
        data = ExperimentData(y=[1.0, 2.0, 1.0, 2.0], t=[1, 1, 0, 0])
        with pytest.raises(NumericDegeneracyError):
            estimate_aupec_normalized(data, Rule.scoring([4.0, 3.0, 2.0, 1.0]))


class TestEstimateMetric:
    def test_dispatch(self, example, example_scores):
        spec = MetricSpec(kind=Metric.PAPE_BUDGET, budget=0.4)
        assert estimate_metric(example, spec, example_scores).point == pytest.approx(0.6)

    def test_c_star_applied_to_scoring_rule(self, example):
        """Scores above 2.5 treat A, B and C."""
        spec = MetricSpec(kind=Metric.PAV, c_star=2.5)
        estimate = estimate_metric(example, spec, Rule.scoring([5.0, 4.0, 3.0, 2.0, 1.0]))
        assert estimate.proportion_treated == pytest.approx(0.6)

    def test_comparison_rule_required(self, example, example_scores):
        spec = MetricSpec(kind=Metric.PAPD_BUDGET, budget=0.4)
        with pytest.raises(InputError):
            estimate_metric(example, spec, example_scores)


class TestBiasBound:
    def test_user_cap(self, experiment):
        estimate = estimate_pape_budget(experiment, Rule.scoring(experiment.x[:, 0]), 0.3)
        bounded = attach_bias_bound(estimate, 0.1, cate_cap=1.0)
        assert 0.0 <= bounded.diagnostics["bias_bound"] <= 1.0
        assert bounded.diagnostics["bias_cap_plugin"] == 0.0
        assert bounded.point == estimate.point

    def test_plug_in_cap(self, experiment):
        estimate = estimate_pape_budget(experiment, Rule.scoring(experiment.x[:, 0]), 0.3)
        bounded = attach_bias_bound(estimate, 0.1)
        kappas = [estimate.diagnostics["kappa_treated"], estimate.diagnostics["kappa_untreated"]]
        assert bounded.diagnostics["bias_cap"] == pytest.approx(max(abs(k) for k in kappas))
        assert bounded.diagnostics["bias_cap_plugin"] == 1.0

    def test_metrics_without_threshold_unchanged(self, example, example_rule):
        estimate = estimate_pav(example, example_rule)
        assert attach_bias_bound(estimate, 0.1, cate_cap=1.0) is estimate
