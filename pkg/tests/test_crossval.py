"""Tests for cross-validated evaluation."""

import math

import numpy as np
import pytest

from itr_eval.core.errors import FoldDegenerateError, InputError
from itr_eval.core.models import ExperimentData, Metric, MetricSpec
from itr_eval.crossval import (
    crossval,
    cv_aupec,
    cv_papd_budget,
    make_folds,
    pair_covariance,
    pair_covariance_naive,
    pairwise_rule_covariance,
)
from itr_eval.estimation.fixed import estimate_metric
from itr_eval.learners import LearnerKind, LearnerSpec
from tests.conftest import make_experiment

LINEAR = LearnerSpec(kind=LearnerKind.LINEAR_T, ridge=0.1)
BINNED = LearnerSpec(kind=LearnerKind.DIFF_MEANS_BY_BIN, covariate=1)


def _constant(data, seed=0):
    scores = np.random.default_rng(seed).normal(size=data.n)
    return LearnerSpec(kind=LearnerKind.CONSTANT, scores=list(scores))


class TestMakeFolds:
    def test_stratified_sizes(self):
        """Ten units with six treated split into five folds of two."""
        data = make_experiment(n=10, n1=6)
        plan = make_folds(data, 5, seed=1)
        assert list(plan.sizes) == [2, 2, 2, 2, 2]
        assert sorted(plan.treated_sizes) == [1, 1, 1, 1, 2]
        assert plan.equal
        assert plan.m == 2.0

    def test_partition(self, experiment):
        plan = make_folds(experiment, 3, seed=2)
        assert set(np.unique(plan.fold_of)) == {0, 1, 2}
        assert plan.sizes.sum() == experiment.n
        assert plan.sizes.max() - plan.sizes.min() <= 1
        assert plan.treated_sizes.max() - plan.treated_sizes.min() <= 1

    def test_deterministic(self, experiment):
        first = make_folds(experiment, 4, seed=7)
        second = make_folds(experiment, 4, seed=7)
        assert np.array_equal(first.fold_of, second.fold_of)

    def test_single_fold_rejected(self, experiment):
        with pytest.raises(InputError):
            make_folds(experiment, 1, seed=0)

    def test_too_many_folds(self):
        data = make_experiment(n=10, n1=3)
        with pytest.raises(InputError):
            make_folds(data, 4, seed=0)


class TestPairCovariance:
    def test_matches_double_loop(self):
        """The O(nK) form equals the literal pair sum on K=2, n=12."""
        rng = np.random.default_rng(0)
        F = rng.integers(0, 2, size=(2, 12))
        a, b = rng.normal(size=12), rng.normal(size=12)
        u, v = rng.integers(0, 2, size=12).astype(float), np.ones(12)
        fast = pair_covariance(F, a, b, u, v)
        slow = pair_covariance_naive(F, a, b, u, v)
        assert fast == pytest.approx(slow, rel=1e-12, abs=1e-14)

    @pytest.mark.parametrize("K", [3, 5])
    def test_matches_double_loop_more_folds(self, K):
        rng = np.random.default_rng(K)
        F = rng.integers(0, 2, size=(K, 15))
        a, b, u, v = (rng.normal(size=15) for _ in range(4))
        fast = pair_covariance(F, a, b, u, v)
        assert fast == pytest.approx(pair_covariance_naive(F, a, b, u, v), rel=1e-10)

    def test_identical_rules_have_no_covariance(self, experiment):
        F = np.tile(np.random.default_rng(1).integers(0, 2, size=experiment.n), (4, 1))
        cov = pairwise_rule_covariance(F, experiment)
        assert cov.plain == pytest.approx(0.0, abs=1e-12)
        assert cov.effect == pytest.approx(0.0, abs=1e-12)
        assert cov.effect_pair == pytest.approx(0.0, abs=1e-12)

    def test_zero_outcomes(self):
        data = ExperimentData(y=np.zeros(10), t=[1, 0] * 5)
        F = np.random.default_rng(2).integers(0, 2, size=(2, 10))
        cov = pairwise_rule_covariance(F, data)
        assert cov.effect == 0.0
        assert cov.effect_pair == 0.0

    def test_no_pairs(self):
        F = np.ones((2, 3))
        assert math.isnan(pair_covariance(F, np.ones(3), np.ones(3), np.zeros(3), np.ones(3)))


class TestCrossval:
    @pytest.mark.parametrize(
        "spec",
        [
            MetricSpec(kind=Metric.PAV, c_star=0.0),
            MetricSpec(kind=Metric.PAPE, c_star=0.0),
            MetricSpec(kind=Metric.PAPE_BUDGET, budget=0.4),
            MetricSpec(kind=Metric.AUPEC),
        ],
        ids=lambda spec: spec.label,
    )
    def test_constant_scorer_matches_fold_estimates(self, spec):
        """With fixed scores the pooled point averages the fixed-rule fold estimates."""
        data = make_experiment(n=40, seed=3)
        result = crossval(data, _constant(data), spec, 2, seed=5, draws=200)
        manual = []
        for k in range(2):
            test, rule, _ = result.test_fold(data, k)
            manual.append(estimate_metric(test, spec, rule, draws=200).point)
        assert result.pooled.point == pytest.approx(np.mean(manual))
        assert result.pooled.point == pytest.approx(result.points.mean())

    def test_constant_scorer_zeroes_rule_covariance(self):
        data = make_experiment(n=40, seed=4)
        result = crossval(data, _constant(data), MetricSpec(kind=Metric.PAPE, c_star=0.0), 4, 1)
        assert result.components["rule_covariance"] == pytest.approx(0.0, abs=1e-12)

    def test_min_trick(self):
        """The spread subtracted never exceeds the single-fold variance."""
        data = make_experiment(n=60, seed=6)
        result = crossval(data, LINEAR, MetricSpec(kind=Metric.PAPE_BUDGET, budget=0.2), 3, 2)
        single = result.components["single_fold_variance"]
        spread = min(result.s_f_squared, single)
        assert result.components["variance"] == pytest.approx(single - 2 / 3 * spread)

    def test_zero_budget(self):
        data = make_experiment(n=40, seed=7)
        result = crossval(data, LINEAR, MetricSpec(kind=Metric.PAPE_BUDGET, budget=0.0), 2, 0)
        assert np.allclose(result.points, 0.0)
        assert result.pooled.std_error == pytest.approx(0.0, abs=1e-12)

    def test_seed_determinism(self):
        data = make_experiment(n=40, seed=8)
        spec = MetricSpec(kind=Metric.AUPEC)
        first = crossval(data, LINEAR, spec, 2, 11, draws=500)
        second = crossval(data, LINEAR, spec, 2, 11, draws=500)
        assert first.pooled.point == second.pooled.point
        assert first.pooled.std_error == second.pooled.std_error

    def test_worker_count_does_not_change_result(self):
        data = make_experiment(n=40, seed=9)
        spec = MetricSpec(kind=Metric.PAPE, c_star=0.0)
        serial = crossval(data, LINEAR, spec, 2, 3, max_workers=1)
        pooled = crossval(data, LINEAR, spec, 2, 3, max_workers=2)
        assert serial.pooled.point == pooled.pooled.point
        assert serial.pooled.std_error == pooled.pooled.std_error

    def test_unequal_folds_flagged(self):
        data = make_experiment(n=41, n1=20, seed=10)
        result = crossval(data, LINEAR, MetricSpec(kind=Metric.PAPE, c_star=0.0), 2, 0)
        assert result.pooled.diagnostics["folds_unequal"] == 1.0

    def test_unsupported_metric(self, experiment):
        with pytest.raises(InputError, match="not available"):
            crossval(experiment, LINEAR, MetricSpec(kind=Metric.SAPE), 2, 0)

    def test_papd_needs_comparison_learner(self, experiment):
        with pytest.raises(InputError):
            crossval(experiment, LINEAR, MetricSpec(kind=Metric.PAPD_BUDGET, budget=0.2), 2, 0)

    def test_degenerate_fold(self):
        """A test fold with a single control unit aborts the run."""
        data = make_experiment(n=24, n1=21, seed=11)
        with pytest.raises(FoldDegenerateError):
            crossval(data, LINEAR, MetricSpec(kind=Metric.PAPE, c_star=0.0), 3, 0)


class TestCvPapd:
    def test_same_learner_is_zero(self):
        data = make_experiment(n=40, seed=12)
        result = cv_papd_budget(data, LINEAR, LINEAR, 0.2, 2, 0)
        assert result.pooled.point == 0.0

    def test_antisymmetric(self):
        data = make_experiment(n=40, seed=13)
        forward = cv_papd_budget(data, LINEAR, BINNED, 0.3, 2, 1)
        backward = cv_papd_budget(data, BINNED, LINEAR, 0.3, 2, 1)
        assert forward.pooled.point == pytest.approx(-backward.pooled.point)
        assert forward.pooled.std_error == pytest.approx(backward.pooled.std_error)


class TestCvAupec:
    def test_zero_outcomes(self):
        rng = np.random.default_rng(14)
        data = ExperimentData(y=np.zeros(20), t=[1, 0] * 10, x=rng.normal(size=(20, 2)))
        result = cv_aupec(data, _constant(data), -math.inf, 2, 0, draws=100)
        assert result.pooled.point == 0.0
        assert result.pooled.std_error == pytest.approx(0.0, abs=1e-12)

    def test_per_fold_estimates(self):
        data = make_experiment(n=40, seed=15)
        result = cv_aupec(data, LINEAR, 0.0, 2, 0, draws=200)
        assert [fe.fold for fe in result.per_fold] == [0, 1]
        assert math.isfinite(result.pooled.std_error)
