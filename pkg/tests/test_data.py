"""Tests for CSV loading and outcome centering."""

import io

import numpy as np
import pytest

from itr_eval.core.data import (
    ColumnSpec,
    center_outcomes,
    load_experiment,
    read_table,
    rule_from_table,
)
from itr_eval.core.errors import DegenerateDataError, InputError
from itr_eval.core.models import ExperimentData


class TestLoadExperiment:
    def test_worked_example(self, example_csv):
        """The five-row example loads with n1=3 and n0=2."""
        data = load_experiment(example_csv, ColumnSpec())
        assert (data.n, data.n1, data.n0) == (5, 3, 2)
        assert list(data.y) == [2.0, 3.0, -1.0, 1.0, 3.0]
        assert data.x is None

    def test_covariate_columns(self, example_csv):
        data = load_experiment(example_csv, ColumnSpec(covariates=["score", "score_g"]))
        assert data.x.shape == (5, 2)

    def test_custom_column_names(self):
        source = io.StringIO("outcome,arm\n1,1\n2,1\n3,0\n4,0\n")
        data = load_experiment(source, ColumnSpec(outcome="outcome", treatment="arm"))
        assert data.n1 == 2

    def test_non_binary_treatment(self):
        source = io.StringIO("y,t\n1,1\n2,2\n3,0\n4,0\n")
        with pytest.raises(InputError, match="0 or 1"):
            load_experiment(source, ColumnSpec())

    def test_empty_file(self):
        with pytest.raises(DegenerateDataError):
            load_experiment(io.StringIO(""), ColumnSpec())

    def test_missing_column(self):
        source = io.StringIO("y,treat\n1,1\n")
        with pytest.raises(InputError, match="missing column 't'"):
            load_experiment(source, ColumnSpec())

    def test_missing_value_rejected(self):
        source = io.StringIO("y,t\n1,1\n,1\n3,0\n4,0\n")
        with pytest.raises(InputError, match="missing value"):
            load_experiment(source, ColumnSpec())

    def test_non_numeric_outcome(self):
        source = io.StringIO("y,t\n1,1\nabc,1\n3,0\n4,0\n")
        with pytest.raises(InputError, match="not a number"):
            load_experiment(source, ColumnSpec())

    def test_too_few_controls(self):
        """Fewer than two units in an arm is degenerate."""
        source = io.StringIO("y,t\n1,1\n2,1\n3,0\n")
        with pytest.raises(DegenerateDataError):
            load_experiment(source, ColumnSpec())

    def test_missing_file(self, tmp_path):
        with pytest.raises(InputError, match="not found"):
            load_experiment(tmp_path / "absent.csv", ColumnSpec())

    def test_ragged_row(self):
        with pytest.raises(InputError, match="expected 2 fields"):
            read_table(io.StringIO("y,t\n1,1,5\n"))


class TestRuleFromTable:
    def test_scoring_and_fixed(self, example_csv):
        table = read_table(example_csv)
        scoring = rule_from_table(table, "score", c_star=2.5)
        fixed = rule_from_table(table, "f", fixed=True)
        assert scoring.is_scoring and scoring.c_star == 2.5
        assert list(fixed.values) == [1, 0, 0, 1, 0]


class TestCenterOutcomes:
    def test_worked_example_shift(self, example):
        """Treated mean 8/3 and control mean 0 give a shift of -4/3."""
        centered, delta = center_outcomes(example)
        assert delta == pytest.approx(-4 / 3)
        assert centered.treated_mean + centered.control_mean == pytest.approx(0.0, abs=1e-12)

    def test_idempotent(self, example):
        centered, _ = center_outcomes(example)
        again, delta = center_outcomes(centered)
        assert delta == 0.0
        assert again is centered

    def test_all_zero_outcomes(self):
        data = ExperimentData(y=np.zeros(4), t=[1, 1, 0, 0])
        centered, delta = center_outcomes(data)
        assert delta == 0.0
        assert centered is data
