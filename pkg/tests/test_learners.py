"""Tests for the built-in scoring learners."""

import numpy as np
import pytest

from itr_eval.core.errors import InputError, LearnerFitError
from itr_eval.core.models import ExperimentData
from itr_eval.learners import LearnerKind, LearnerSpec, fit
from tests.conftest import make_experiment


class TestLearnerSpec:
    def test_parse_kind_only(self):
        assert LearnerSpec.parse("linear_t").kind is LearnerKind.LINEAR_T

    def test_parse_parameters(self):
        spec = LearnerSpec.parse("diff_means_by_bin:covariate=1, bins=3")
        assert spec.kind is LearnerKind.DIFF_MEANS_BY_BIN
        assert (spec.covariate, spec.bins) == (1, 3)

    def test_unknown_kind(self):
        with pytest.raises(InputError, match="unknown learner"):
            LearnerSpec.parse("forest")

    def test_malformed_parameter(self):
        with pytest.raises(InputError):
            LearnerSpec.parse("linear_t:ridge")

    def test_constant_needs_scores(self):
        with pytest.raises(InputError):
            LearnerSpec.parse("constant")


class TestLinearTLearner:
    def test_recovers_linear_effect(self):
        """Noise-free outcomes with effect 2*x give scores 2*x."""
        rng = np.random.default_rng(0)
        x = rng.normal(size=(60, 1))
        t = np.tile([1, 0], 30)
        y = 1.0 + x[:, 0] + t * 2.0 * x[:, 0]
        data = ExperimentData(y=y, t=t, x=x)
        scores = fit(LearnerSpec(kind=LearnerKind.LINEAR_T), data).score(data).values
        assert scores == pytest.approx(2.0 * x[:, 0], abs=1e-6)

    def test_needs_covariates(self, example):
        with pytest.raises(LearnerFitError):
            fit(LearnerSpec(kind=LearnerKind.LINEAR_T), example)

    def test_unpenalized_underdetermined(self):
        data = make_experiment(n=8, d=6)
        with pytest.raises(LearnerFitError):
            fit(LearnerSpec(kind=LearnerKind.LINEAR_T, ridge=0.0), data)

    def test_deterministic(self, experiment):
        spec = LearnerSpec(kind=LearnerKind.LINEAR_T, ridge=0.1)
        first = fit(spec, experiment).score(experiment).values
        second = fit(spec, experiment).score(experiment).values
        assert np.array_equal(first, second)


class TestDiffMeansByBin:
    def test_bin_effects(self):
        """Each bin scores the difference in means of its own units."""
        x = np.array([[0.0], [0.1], [0.2], [0.3], [1.0], [1.1], [1.2], [1.3]])
        t = [1, 0, 1, 0, 1, 0, 1, 0]
        y = [5.0, 1.0, 5.0, 1.0, 2.0, 2.0, 2.0, 2.0]
        data = ExperimentData(y=y, t=t, x=x)
        scores = fit(LearnerSpec(kind=LearnerKind.DIFF_MEANS_BY_BIN, bins=2), data).score(data)
        assert list(scores.values) == pytest.approx([4.0] * 4 + [0.0] * 4)

    def test_covariate_out_of_range(self, experiment):
        spec = LearnerSpec(kind=LearnerKind.DIFF_MEANS_BY_BIN, covariate=9)
        with pytest.raises(LearnerFitError):
            fit(spec, experiment)


class TestConstantScorer:
    def test_scores_by_unit_id(self, experiment):
        """Subsets are scored by their original unit ids."""
        scores = np.arange(experiment.n, dtype=float)
        fitted = fit(LearnerSpec(kind=LearnerKind.CONSTANT, scores=list(scores)), experiment)
        subset = experiment.subset(np.array([3, 7, 11]))
        assert list(fitted.score(subset).values) == [3.0, 7.0, 11.0]
