"""Tests for where log records end up during CLI runs and estimation."""

import logging
from logging.handlers import RotatingFileHandler

import pytest
from click.testing import CliRunner

from itr_eval.cli import cli
from itr_eval.config import setup_logging


def _console_level():
    handlers = logging.getLogger("itr_eval").handlers
    [console] = [h for h in handlers if not isinstance(h, RotatingFileHandler)]
    return console.level


def _log_text(log_dir):
    for handler in logging.getLogger("itr_eval").handlers:
        if isinstance(handler, RotatingFileHandler):
            handler.flush()
    return (log_dir / "itr_eval.log").read_text(encoding="utf-8")


@pytest.fixture
def budget_args(example_csv):
    return ["evaluate", "-i", str(example_csv), "--rule-col", "score", "--budget", "0.4"]


class TestVerbosity:
    def test_console_info_by_default(self, isolated_logging, budget_args):
        result = CliRunner().invoke(cli, budget_args)
        assert result.exit_code == 0, result.output
        assert _console_level() == logging.INFO

    def test_verbose_flag_shows_debug(self, isolated_logging, budget_args):
        result = CliRunner().invoke(cli, ["--verbose", *budget_args])
        assert result.exit_code == 0, result.output
        assert _console_level() == logging.DEBUG

    def test_verbose_from_environment(self, isolated_logging, budget_args):
        result = CliRunner().invoke(cli, budget_args, env={"ITR_EVAL_VERBOSE": "1"})
        assert result.exit_code == 0, result.output
        assert _console_level() == logging.DEBUG

    def test_second_setup_moves_console_level(self, isolated_logging):
        setup_logging()
        setup_logging(verbose=True)
        assert len(logging.getLogger("itr_eval").handlers) == 2
        assert _console_level() == logging.DEBUG


class TestLogFile:
    def test_file_in_log_dir(self, isolated_logging):
        path = setup_logging()
        assert path == isolated_logging / "itr_eval.log"
        assert path.exists()

    def test_centering_shift_recorded(self, isolated_logging, budget_args):
        """The file keeps DEBUG records even when the console shows INFO."""
        result = CliRunner().invoke(cli, budget_args)
        assert result.exit_code == 0, result.output
        assert "Centered outcomes by -1.33333 for pape_budget" in _log_text(isolated_logging)

    def test_clamped_variance_recorded(self, isolated_logging):
        from itr_eval.estimation.variance import finalize_variance

        setup_logging()
        diagnostics = {}
        assert finalize_variance(-0.5, diagnostics) == 0.0
        assert diagnostics["variance_clamped"] == 1.0
        text = _log_text(isolated_logging)
        assert "WARNING" in text
        assert "Assembled variance -0.5 is negative; clamping to 0" in text

    def test_unequal_folds_recorded(self, isolated_logging):
        from itr_eval.crossval import make_folds
        from tests.conftest import make_experiment

        setup_logging()
        plan = make_folds(make_experiment(n=21, n1=10), 2, seed=0)
        assert not plan.equal
        text = _log_text(isolated_logging)
        assert "itr_eval.crossval.folds WARNING" in text
        assert "n=21 is not divisible by K=2" in text
