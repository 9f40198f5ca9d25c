"""Tests for budget thresholds and assignment vectors."""

import math

import numpy as np
import pytest

from itr_eval.core.errors import InputError
from itr_eval.core.models import Rule
from itr_eval.core.rules import assignments, budget_count, rank_order, threshold_for_budget


class TestBudgetCount:
    def test_floor(self):
        assert budget_count(5, 0.4) == 2
        assert budget_count(5, 0.5) == 2

    def test_absorbs_representation_error(self):
        """0.29 * 100 is 28.999... in binary but allows 29 units."""
        assert budget_count(100, 0.29) == 29

    def test_out_of_range(self):
        with pytest.raises(InputError):
            budget_count(10, -0.1)


class TestThresholdForBudget:
    def test_top_two_of_three(self):
        """Budget 2/3 treats the two best units; the threshold is the third score."""
        threshold, treated = threshold_for_budget(Rule.scoring([0.9, 0.5, 0.1]), 2 / 3)
        assert list(treated) == [0, 1]
        assert threshold == 0.1

    def test_full_budget(self):
        threshold, treated = threshold_for_budget(Rule.scoring([3.0, 1.0, 2.0]), 1.0)
        assert len(treated) == 3
        assert threshold == -math.inf

    def test_zero_budget(self):
        threshold, treated = threshold_for_budget(Rule.scoring([3.0, 1.0, 2.0]), 0.0)
        assert len(treated) == 0
        assert threshold == math.inf

    def test_requires_scoring_rule(self):
        with pytest.raises(InputError):
            threshold_for_budget(Rule.fixed([1, 0]), 0.5)

    def test_budget_out_of_range(self):
        with pytest.raises(InputError):
            threshold_for_budget(Rule.scoring([1.0, 2.0]), 1.1)


class TestAssignments:
    def test_scoring_without_budget_treats_all_above_c_star(self):
        assert list(assignments(Rule.scoring([5, 4, 3, 2, 1]))) == [1, 1, 1, 1, 1]
        assert list(assignments(Rule.scoring([5, 4, 3, 2, 1], c_star=2.5))) == [1, 1, 1, 0, 0]

    def test_scoring_with_budget(self):
        assert list(assignments(Rule.scoring([5, 4, 3, 2, 1]), 0.4)) == [1, 1, 0, 0, 0]

    def test_fixed_rule_is_identity(self, example_rule):
        assert list(assignments(example_rule)) == [1, 0, 0, 1, 0]

    def test_budget_with_fixed_rule_rejected(self, example_rule):
        with pytest.raises(InputError):
            assignments(example_rule, 0.4)

    def test_ties_broken_by_index(self):
        """Tied scores favour the lower unit index."""
        assert list(assignments(Rule.scoring([1.0, 1.0, 1.0]), 2 / 3)) == [1, 1, 0]
        assert list(rank_order(np.array([2.0, 5.0, 5.0, 1.0]))) == [1, 2, 0, 3]

    @pytest.mark.parametrize("p", [0.0, 0.1, 0.25, 0.33, 0.5, 0.77, 1.0])
    def test_budget_count_is_exact(self, p):
        scores = np.random.default_rng(1).normal(size=37)
        assert assignments(Rule.scoring(scores), p).sum() == budget_count(37, p)

    def test_monotone_in_budget(self):
        """A larger budget treats a superset of units."""
        rule = Rule.scoring(np.random.default_rng(2).normal(size=30))
        previous = assignments(rule, 0.0)
        for p in np.linspace(0.05, 1.0, 20):
            current = assignments(rule, float(p))
            assert np.all(current >= previous)
            previous = current

    def test_permutation_equivariance(self):
        """Permuting units permutes the assignment when scores are distinct."""
        rng = np.random.default_rng(3)
        scores = rng.normal(size=25)
        perm = rng.permutation(25)
        direct = assignments(Rule.scoring(scores), 0.4)
        permuted = assignments(Rule.scoring(scores[perm]), 0.4)
        assert np.array_equal(permuted, direct[perm])
