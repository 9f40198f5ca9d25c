"""Shared test fixtures and configuration."""

import logging
import sys

import numpy as np
import pytest

from itr_eval.core.models import ExperimentData, PotentialPopulation, Rule

# Five-unit worked example: three treated units (A, B, E), two controls (C, D)
EXAMPLE_Y = [2.0, 3.0, -1.0, 1.0, 3.0]
EXAMPLE_T = [1, 1, 0, 0, 1]
EXAMPLE_F = [1, 0, 0, 1, 0]
EXAMPLE_SCORES = [5.0, 4.0, 3.0, 2.0, 1.0]


def pytest_configure(config):
    """Use 'spawn' for process pools on macOS, where fork is unsafe."""
    if sys.platform == "darwin":
        import multiprocessing

        try:
            multiprocessing.set_start_method("spawn", force=True)
        except RuntimeError:
            pass  # Already set


@pytest.fixture
def example():
    return ExperimentData(y=EXAMPLE_Y, t=EXAMPLE_T)


@pytest.fixture
def example_rule():
    return Rule.fixed(EXAMPLE_F)


@pytest.fixture
def example_scores():
    return Rule.scoring(EXAMPLE_SCORES)


@pytest.fixture
def example_csv(tmp_path):
    """Worked example as a CSV with a score column and a reversed comparison score."""
    path = tmp_path / "experiment.csv"
    lines = ["y,t,f,score,score_g"]
    for y, t, f, s in zip(EXAMPLE_Y, EXAMPLE_T, EXAMPLE_F, EXAMPLE_SCORES):
        lines.append(f"{y},{t},{f},{s},{6 - s}")
    path.write_text("\n".join(lines) + "\n")
    return path


def make_experiment(n=40, seed=0, n1=None, d=3, effect=1.0):
    """Random experiment with covariates and an effect linear in the first covariate."""
    rng = np.random.default_rng(seed)
    n1 = n // 2 if n1 is None else n1
    x = rng.standard_normal((n, d))
    t = np.zeros(n, dtype=np.int8)
    t[rng.permutation(n)[:n1]] = 1
    y = x[:, 0] + effect * t * x[:, 0] + rng.standard_normal(n)
    return ExperimentData(y=y, t=t, x=x)


def make_population(n=8, seed=0):
    """Small population with both potential outcomes and distinct scores."""
    rng = np.random.default_rng(seed)
    y0 = rng.normal(size=n)
    y1 = y0 + rng.normal(loc=0.5, size=n)
    scores = rng.permutation(n).astype(float)
    return PotentialPopulation(y0=y0, y1=y1, scores=scores)


@pytest.fixture
def experiment():
    return make_experiment()


@pytest.fixture
def population():
    return make_population()


@pytest.fixture
def isolated_logging(tmp_path):
    """Point the log file at a temp dir and drop handlers afterwards."""
    from unittest.mock import patch

    logger = logging.getLogger("itr_eval")
    logger.handlers.clear()
    with patch("itr_eval.config.LOG_DIR", tmp_path / "logs"):
        yield tmp_path / "logs"
    logger.handlers.clear()
    logger.setLevel(logging.WARNING)
