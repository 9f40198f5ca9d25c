"""Data-generating process for coverage simulations.

Covariates come from a finite population (a documented synthetic
generator, or a user CSV); each simulated sample is a bootstrap draw
from it. Outcomes follow

    E[Y(t) | x] = mu(x) + tau(x) t

with

    pi(x)  = 1 / (1 + exp(3 (x1 + x43 + 0.3 (x10 - 1)) - 1))
    mu(x)  = -sin(Phi(pi(x))) + x43
    tau(x) = xi (x3 x24 + (x14 - 1) - (x15 - 1))

and i.i.d. normal noise with standard deviation
``0.25 * sd(mu + pi * tau)`` over the drawn sample.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import NamedTuple

import numpy as np
from pydantic import BaseModel, Field, model_validator
from scipy.stats import norm

from ..config import DEFAULT_POPULATION_SIZE, DEFAULT_TRIALS, EFFECT_SCALES
from ..core.data import numeric_column, read_table
from ..core.errors import InputError
from ..core.models import ExperimentData, PotentialPopulation

logger = logging.getLogger(__name__)

COVARIATE_COLUMNS = ("x1", "x3", "x10", "x14", "x15", "x24", "x43")
CONTINUOUS_COLUMNS = ("x1", "x3")

# Seed-stream tags keeping population, auxiliary and trial draws independent
_POPULATION_STREAM = 0
_AUXILIARY_STREAM = 1
_TRIAL_STREAM = 2
_TRUTH_STREAM = 3


class CovariateSource(str, Enum):
    """Where the covariate population comes from."""

    SYNTHETIC = "synthetic"
    USER_CSV = "user_csv"


class DgpConfig(BaseModel):
    """Settings of one simulation scenario."""

    n: int = Field(default=100, ge=20, description="Sample size per trial")
    xi: float = Field(default=EFFECT_SCALES["low"], gt=0, description="Treatment effect scale")
    trials: int = Field(default=DEFAULT_TRIALS, ge=1)
    seed: int = Field(default=0, ge=0)
    covariate_source: CovariateSource = CovariateSource.SYNTHETIC
    covariate_path: Path | None = None
    population_size: int = Field(default=DEFAULT_POPULATION_SIZE, ge=20)
    population_seed: int = Field(default=0, ge=0, description="Seed of the synthetic population")
    label: str = "custom"

    model_config = {"frozen": True}

    @model_validator(mode="after")
    def _check_source(self) -> DgpConfig:
        if self.covariate_source is CovariateSource.USER_CSV and self.covariate_path is None:
            raise ValueError("a user_csv covariate source needs covariate_path")
        return self

    @classmethod
    def for_scenario(cls, name: str, **kwargs: object) -> DgpConfig:
        """Config for the ``"low"`` or ``"high"`` effect scenario."""
        if name not in EFFECT_SCALES:
            raise InputError(f"unknown scenario {name!r} (choose from {', '.join(EFFECT_SCALES)})")
        return cls(xi=EFFECT_SCALES[name], label=name, **kwargs)  # type: ignore[arg-type]


def stream_seed(seed: int, stream: int, *keys: int) -> np.random.SeedSequence:
    """Independent seed sequence for ``(seed, stream, *keys)``."""
    return np.random.SeedSequence([seed, stream, *keys])


# ----------------------------------------------------------------------
# Covariates and outcome model
# ----------------------------------------------------------------------


def synthetic_covariates(size: int, seed: int) -> np.ndarray:
    """Synthetic covariate population in ``COVARIATE_COLUMNS`` order.

    x1 and x3 are standard normal; the remaining columns are Bernoulli(0.5).
    """
    rng = np.random.default_rng(stream_seed(seed, _POPULATION_STREAM))
    x = np.empty((size, len(COVARIATE_COLUMNS)))
    for j, name in enumerate(COVARIATE_COLUMNS):
        if name in CONTINUOUS_COLUMNS:
            x[:, j] = rng.standard_normal(size)
        else:
            x[:, j] = rng.integers(0, 2, size=size)
    return x


def load_covariates(path: Path | str) -> np.ndarray:
    """Covariate population from a CSV with the ``COVARIATE_COLUMNS`` headers.

    Raises:
        InputError: If the file lacks a required column or has non-numeric values.
    """
    table = read_table(path)
    missing = [name for name in COVARIATE_COLUMNS if name not in table]
    if missing:
        raise InputError(f"covariate file {path} is missing columns: {', '.join(missing)}")
    return np.column_stack([numeric_column(table, name) for name in COVARIATE_COLUMNS])


def _column(x: np.ndarray, name: str) -> np.ndarray:
    return x[:, COVARIATE_COLUMNS.index(name)]


def propensity_term(x: np.ndarray) -> np.ndarray:
    """``pi(x)``."""
    index = _column(x, "x1") + _column(x, "x43") + 0.3 * (_column(x, "x10") - 1.0)
    return 1.0 / (1.0 + np.exp(3.0 * index - 1.0))


def baseline_outcome(x: np.ndarray) -> np.ndarray:
    """``mu(x)``."""
    return -np.sin(norm.cdf(propensity_term(x))) + _column(x, "x43")


def treatment_effect(x: np.ndarray, xi: float) -> np.ndarray:
    """``tau(x)``, linear in the effect scale ``xi``."""
    return xi * (
        _column(x, "x3") * _column(x, "x24")
        + (_column(x, "x14") - 1.0)
        - (_column(x, "x15") - 1.0)
    )


def noise_scale(x: np.ndarray, xi: float) -> float:
    """``0.25 * sd(mu + pi * tau)`` over the rows of ``x``."""
    signal = baseline_outcome(x) + propensity_term(x) * treatment_effect(x, xi)
    return 0.25 * float(np.std(signal, ddof=1))


@dataclass(frozen=True, eq=False)
class CovariatePopulation:
    """Finite covariate population with its conditional mean outcomes."""

    x: np.ndarray
    mu: np.ndarray
    tau: np.ndarray

    @property
    def size(self) -> int:
        return int(self.x.shape[0])

    def potential(self) -> PotentialPopulation:
        """Expected potential outcomes ``mu`` and ``mu + tau`` of every population unit."""
        return PotentialPopulation(y0=self.mu, y1=self.mu + self.tau, x=self.x)

    def as_experiment(self) -> ExperimentData:
        """Population units as an (untreated) experiment, for scoring with fitted learners."""
        return self.potential().observe(np.zeros(self.size, dtype=np.int8))


def build_population(config: DgpConfig) -> CovariatePopulation:
    """Covariate population of a scenario with its mean outcomes."""
    if config.covariate_source is CovariateSource.USER_CSV:
        x = load_covariates(config.covariate_path)  # type: ignore[arg-type]
        logger.info("Loaded %d covariate rows from %s", x.shape[0], config.covariate_path)
    else:
        x = synthetic_covariates(config.population_size, config.population_seed)
    return CovariatePopulation(x=x, mu=baseline_outcome(x), tau=treatment_effect(x, config.xi))


# ----------------------------------------------------------------------
# Samples
# ----------------------------------------------------------------------


class DgpDraw(NamedTuple):
    """Observed sample, its potential outcomes, and the population rows drawn."""

    data: ExperimentData
    potential: PotentialPopulation
    index: np.ndarray


def draw_sample(
    config: DgpConfig, population: CovariatePopulation, seed: np.random.SeedSequence
) -> DgpDraw:
    """Bootstrap sample of ``config.n`` units with noisy outcomes and a balanced assignment."""
    rng = np.random.default_rng(seed)
    n = config.n
    index = rng.integers(0, population.size, size=n)
    x = population.x[index]
    sigma = noise_scale(x, config.xi)
    noise = sigma * rng.standard_normal(n)
    y0 = population.mu[index] + noise
    y1 = y0 + population.tau[index]

    t = np.zeros(n, dtype=np.int8)
    t[rng.permutation(n)[: n // 2]] = 1
    potential = PotentialPopulation(y0=y0, y1=y1, x=x)
    return DgpDraw(potential.observe(t), potential, index)


def dgp_sample(
    config: DgpConfig,
    trial: int = 0,
    population: CovariatePopulation | None = None,
    attempt: int = 0,
) -> tuple[ExperimentData, PotentialPopulation]:
    """Observed sample and full potential outcomes for one trial.

    Deterministic in ``(config, trial, attempt)``; ``attempt`` is the
    re-draw counter for degenerate samples.
    """
    population = build_population(config) if population is None else population
    draw = draw_sample(config, population, trial_seed(config, trial, attempt))
    return draw.data, draw.potential


def auxiliary_sample(config: DgpConfig, population: CovariatePopulation) -> DgpDraw:
    """Sample reserved for fitting the rules evaluated in fixed-rule studies."""
    return draw_sample(config, population, stream_seed(config.seed, _AUXILIARY_STREAM))


def truth_seed(config: DgpConfig, replication: int, attempt: int = 0) -> np.random.SeedSequence:
    """Seed of a replication used to approximate cross-validated truths."""
    return stream_seed(config.seed, _TRUTH_STREAM, replication, attempt)


def trial_seed(config: DgpConfig, trial: int, attempt: int) -> np.random.SeedSequence:
    return stream_seed(config.seed, _TRIAL_STREAM, trial, attempt)
