"""Shared variance machinery for rule evaluation.

Provides the plug-in pieces every estimator assembles its variance from:
within-arm sample variances, difference-in-means kappa terms and their
profile over budgets, the incomplete-beta bias bounds, the binomial
Z-moment engine behind the AUPEC variance, and the conservative
covariance bound used when two rules are compared.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

import numpy as np
from pydantic import BaseModel, Field
from scipy.special import betainc, comb

from ..config import DEFAULT_MC_DRAWS, EXACT_POLYNOMIAL_MAX_N, MC_BLOCK_SIZE
from ..core.errors import DegenerateDataError, InputError
from ..core.models import ExperimentData, Rule
from ..core.rules import budget_count, rank_order

logger = logging.getLogger(__name__)


# ----------------------------------------------------------------------
# Sample variances
# ----------------------------------------------------------------------


def arm_variances(values: np.ndarray, data: ExperimentData) -> tuple[float, float]:
    """Sample variances (ddof=1) of ``values`` within the treated and control arms.

    An arm with fewer than two units yields NaN.
    """
    treated = data.treated
    v1 = float(np.var(values[treated], ddof=1)) if data.n1 >= 2 else math.nan
    v0 = float(np.var(values[~treated], ddof=1)) if data.n0 >= 2 else math.nan
    return v1, v0


def neyman_terms(values: np.ndarray, data: ExperimentData) -> float:
    """``S1^2 / n1 + S0^2 / n0`` for the per-unit terms ``values``."""
    v1, v0 = arm_variances(values, data)
    return v1 / data.n1 + v0 / data.n0


def finalize_variance(variance: float, diagnostics: dict[str, float]) -> float:
    """Turn an assembled variance into a standard error.

    Negative totals are clamped to zero and NaN totals are passed through;
    both outcomes are recorded in ``diagnostics``.
    """
    if math.isnan(variance):
        diagnostics["variance_unavailable"] = 1.0
        return math.nan
    if variance < 0:
        logger.warning("Assembled variance %.3g is negative; clamping to 0", variance)
        diagnostics["variance_clamped"] = 1.0
        diagnostics["variance_raw"] = variance
        return 0.0
    return math.sqrt(variance)


# ----------------------------------------------------------------------
# Kappa plug-ins
# ----------------------------------------------------------------------


def kappa_hat(data: ExperimentData, assignment: np.ndarray, t: int) -> float | None:
    """Difference in mean outcomes between arms within the group ``{f_i = t}``.

    Returns:
        The treated-minus-control difference, or ``None`` when either arm
        is empty inside the group.
    """
    group = np.asarray(assignment) == t
    treated = group & data.treated
    control = group & ~data.treated
    if not treated.any() or not control.any():
        return None
    return float(data.y[treated].mean() - data.y[control].mean())


class KappaProfile(NamedTuple):
    """Kappa plug-ins for every budget ``z / n``, z = 1..n.

    ``treated[z - 1]`` is the kappa of the top-z group and ``untreated[z - 1]``
    that of the remaining n - z units, after edge substitution.
    """

    treated: np.ndarray
    untreated: np.ndarray
    z_min: int
    z_max: int

    def at(self, z: int) -> tuple[float, float]:
        """Kappa pair at budget ``z / n``; z = 0 reuses the z = 1 entries."""
        index = max(z, 1) - 1
        return float(self.treated[index]), float(self.untreated[index])

    def substituted(self, z: int) -> bool:
        return z < self.z_min or z > self.z_max


def kappa_profile(data: ExperimentData, rule: Rule) -> KappaProfile:
    """Kappa plug-ins for the top-z groups of a scoring rule.

    Below ``z_min`` (the first z whose top group holds both arms) the top-group
    kappa is copied from ``z_min``; above ``z_max`` (the last z whose remainder
    holds both arms) the remainder kappa is copied from ``z_max``.

    Raises:
        InputError: If the rule is not a scoring rule.
        DegenerateDataError: If no budget yields an estimable kappa.
    """
    if not rule.is_scoring:
        raise InputError("kappa profiles require a scoring rule")
    order = rank_order(rule.values)
    y = data.y[order]
    treated = data.t[order] == 1

    n_t = np.cumsum(treated)
    n_c = np.cumsum(~treated)
    s_t = np.cumsum(np.where(treated, y, 0.0))
    s_c = np.cumsum(np.where(treated, 0.0, y))
    rest_n_t = n_t[-1] - n_t
    rest_n_c = n_c[-1] - n_c
    rest_s_t = s_t[-1] - s_t
    rest_s_c = s_c[-1] - s_c

    top_ok = (n_t > 0) & (n_c > 0)
    rest_ok = (rest_n_t > 0) & (rest_n_c > 0)
    if not top_ok.any() or not rest_ok.any():
        raise DegenerateDataError("no budget leaves both arms inside the rule's groups")

    with np.errstate(divide="ignore", invalid="ignore"):
        top = s_t / n_t - s_c / n_c
        rest = rest_s_t / rest_n_t - rest_s_c / rest_n_c

    z_min = int(np.argmax(top_ok)) + 1
    z_max = int(len(rest_ok) - np.argmax(rest_ok[::-1]))
    top[: z_min - 1] = top[z_min - 1]
    rest[z_max:] = rest[z_max - 1]
    top.setflags(write=False)
    rest.setflags(write=False)
    return KappaProfile(treated=top, untreated=rest, z_min=z_min, z_max=z_max)


def budget_kappa_term(n: int, k: int, p: float, kappa1: float, kappa0: float) -> float:
    """Threshold-estimation term of the budgeted PAPE variance.

    ``k (n - k) / (n^2 (n - 1)) * {(2p - 1) kappa1^2 - 2p kappa1 kappa0}``.
    """
    coefficient = k * (n - k) / (n**2 * (n - 1))
    return coefficient * ((2 * p - 1) * kappa1**2 - 2 * p * kappa1 * kappa0)


def papd_cov_bound(n: int, p: float, kappa_f1: float, kappa_g1: float) -> float:
    """Conservative bound on the threshold covariance of two budgeted rules.

    ``floor(np) * max(floor(np), n - floor(np)) / (n^2 (n - 1)) * |kappa_f1 * kappa_g1|``
    """
    k = budget_count(n, p)
    return k * max(k, n - k) / (n**2 * (n - 1)) * abs(kappa_f1 * kappa_g1)


# ----------------------------------------------------------------------
# Incomplete beta and bias bounds
# ----------------------------------------------------------------------


def reg_inc_beta(x: float, alpha: float, beta: float) -> float:
    """Regularized incomplete beta ``I_x(alpha, beta)``, the Beta CDF.

    For ``alpha <= 0`` the Heaviside step ``H(x)`` is returned (0 for
    ``x <= 0``, 1 otherwise), the convention needed when a budget treats
    everyone.

    Raises:
        InputError: If ``x`` is outside [0, 1] or ``beta <= 0``.
    """
    if not 0.0 <= x <= 1.0:
        raise InputError(f"x must be in [0, 1], got {x}")
    if alpha <= 0:
        return 1.0 if x > 0 else 0.0
    if beta <= 0:
        raise InputError(f"beta must be positive, got {beta}")
    return float(betainc(alpha, beta, x))


class BiasBound(BaseModel):
    """Upper bound on P(|conditional bias| >= epsilon) from threshold estimation."""

    epsilon: float = Field(gt=0)
    probability_bound: float = Field(ge=0.0, le=1.0)
    gamma: float = Field(ge=0.0)
    cate_cap: float = Field(description="Max |CATE| near the threshold, user-supplied or plug-in")
    plug_in: bool = False

    model_config = {"frozen": True}


def _clip_unit(value: float) -> float:
    return min(1.0, max(0.0, value))


def _tail_bound(
    n: int, p: float, epsilon: float, cate_cap: float, cap_factor: float, tail_factor: float
) -> BiasBound:
    if epsilon <= 0:
        raise InputError(f"epsilon must be positive, got {epsilon}")
    if not cate_cap > 0:
        raise InputError(f"cate_cap must be positive, got {cate_cap}")
    gamma = epsilon / (cap_factor * cate_cap)
    k = budget_count(n, p)
    alpha, beta = n - k, k + 1
    upper = reg_inc_beta(_clip_unit(1 - p + gamma), alpha, beta)
    lower = reg_inc_beta(_clip_unit(1 - p - gamma), alpha, beta)
    bound = _clip_unit(1 - tail_factor * upper + tail_factor * lower)
    return BiasBound(epsilon=epsilon, probability_bound=bound, gamma=gamma, cate_cap=cate_cap)


def bias_bound_pape_budget(n: int, p: float, epsilon: float, cate_cap: float) -> BiasBound:
    """Bias bound of the budgeted PAPE estimator, with ``gamma = epsilon / cate_cap``."""
    return _tail_bound(n, p, epsilon, cate_cap, cap_factor=1.0, tail_factor=1.0)


def bias_bound_aupec(n: int, p_f_hat: float, epsilon: float, cate_cap_at_cstar: float) -> BiasBound:
    """Bias bound of the AUPEC estimator, with ``gamma = epsilon / (2 * cate_cap)``."""
    return _tail_bound(n, p_f_hat, epsilon, cate_cap_at_cstar, cap_factor=2.0, tail_factor=1.0)


def bias_bound_papd(n: int, p: float, epsilon: float, cate_cap: float) -> BiasBound:
    """Bias bound of the budgeted PAPD estimator; both rules' thresholds contribute a tail."""
    return _tail_bound(n, p, epsilon, cate_cap, cap_factor=1.0, tail_factor=2.0)


# ----------------------------------------------------------------------
# Binomial Z moments
# ----------------------------------------------------------------------


class ZMode(str, Enum):
    """How expectations over Z ~ Binomial(n, p) are evaluated."""

    MONTE_CARLO = "monte_carlo"
    EXACT = "exact"


class ZMomentResult(NamedTuple):
    expectation_term: float
    variance_term: float
    expectation_se: float


@dataclass(frozen=True, eq=False)
class ZMomentEngine:
    """Expectation and variance terms of the AUPEC variance over Z ~ Binomial(n, p_hat).

    For every Z = 0..n the engine tabulates the bracketed summand ``g(Z)``
    and the cumulative curve term ``h(Z)`` from the kappa profiles, then
    averages them over Monte Carlo draws of Z or over the exact binomial
    law written as a polynomial in p.

    Attributes:
        n: Number of units.
        p_hat: Estimated proportion treated by the rule.
        kappa_treated: Top-group kappa for z = 1..n.
        kappa_untreated: Remainder kappa for z = 1..n.
        mode: Monte Carlo or exact polynomial evaluation.
        draws: Monte Carlo draws of Z.
        seed: Monte Carlo seed; block b of draws uses ``default_rng([seed, b])``.
        unbiased_powers: In exact mode, replace each ``p^r`` with its unbiased
            estimator ``s(s-1)...(s-r+1) / (n(n-1)...(n-r+1))``, ``s = n * p_hat``.
    """

    n: int
    p_hat: float
    kappa_treated: np.ndarray
    kappa_untreated: np.ndarray
    mode: ZMode = ZMode.MONTE_CARLO
    draws: int = DEFAULT_MC_DRAWS
    seed: int = 0
    unbiased_powers: bool = False

    def __post_init__(self) -> None:
        if self.n < 2:
            raise InputError(f"Z moments need n >= 2, got {self.n}")
        if not 0.0 <= self.p_hat <= 1.0:
            raise InputError(f"p_hat must be in [0, 1], got {self.p_hat}")
        if self.draws < 1:
            raise InputError("Monte Carlo draws must be at least 1")
        if self.mode is ZMode.EXACT and self.n > EXACT_POLYNOMIAL_MAX_N:
            raise InputError(
                f"exact polynomial Z moments are limited to n <= {EXACT_POLYNOMIAL_MAX_N}"
            )
        k1 = np.asarray(self.kappa_treated, dtype=np.float64)
        k0 = np.asarray(self.kappa_untreated, dtype=np.float64)
        if k1.shape != (self.n,) or k0.shape != (self.n,):
            raise InputError("kappa arrays must have length n")
        g, h = self._tabulate(self.n, k1, k0)
        object.__setattr__(self, "_g", g)
        object.__setattr__(self, "_h", h)

    @staticmethod
    def _tabulate(n: int, k1: np.ndarray, k0: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Tabulate g(Z) and h(Z) for Z = 0..n in O(n)."""
        nf = float(n)
        z = np.arange(1, n + 1, dtype=np.float64)
        big_z = np.arange(0, n + 1, dtype=np.float64)
        # index Z = 0 reuses kappa(1); every Z = 0 term carries a zero factor
        k1z = np.concatenate(([k1[0]], k1))
        k0z = np.concatenate(([k0[0]], k0))

        def prefix(values: np.ndarray) -> np.ndarray:
            return np.concatenate(([0.0], np.cumsum(values)))

        p_sum = prefix(z * k1)  # sum_{z <= Z} z k1(z)
        pair_sum = prefix((nf - z) * k1 * p_sum[:-1])  # sum_{z < z' <= Z} z (n - z') k1 k1'
        cross_sum = prefix(z * (nf - z) * k1 * k0)
        square_sum = prefix(z * (nf - z) * k1**2)

        c3 = nf**2 * (nf - 1)
        c4 = nf**4 * (nf - 1)
        rest = nf - big_z
        g = (
            -(cross_sum / c3 + big_z * rest**2 / c3 * k1z * k0z) / nf
            - 2.0 / c4 * pair_sum
            - big_z**2 * rest**2 / c4 * k1z**2
            - 2.0 * rest**2 / c4 * k1z * p_sum
            + square_sum / nf**4
        )
        h = p_sum / nf + rest * big_z / nf * k1z
        return g, h

    @property
    def g(self) -> np.ndarray:
        return self._g  # type: ignore[attr-defined]

    @property
    def h(self) -> np.ndarray:
        return self._h  # type: ignore[attr-defined]

    def terms(self) -> ZMomentResult:
        """Evaluate the expectation and variance terms."""
        if self.p_hat in (0.0, 1.0):
            z = self.n if self.p_hat == 1.0 else 0
            return ZMomentResult(float(self.g[z]), 0.0, 0.0)
        if self.mode is ZMode.EXACT:
            return self._exact_terms()
        return self._monte_carlo_terms()

    def sample_z(self) -> np.ndarray:
        """Monte Carlo draws of Z, generated in fixed-size seeded blocks."""
        blocks = []
        remaining = self.draws
        block = 0
        while remaining > 0:
            size = min(MC_BLOCK_SIZE, remaining)
            rng = np.random.default_rng([self.seed, block])
            blocks.append(rng.binomial(self.n, self.p_hat, size=size))
            remaining -= size
            block += 1
        return np.concatenate(blocks)

    def _monte_carlo_terms(self) -> ZMomentResult:
        z = self.sample_z()
        g = self.g[z]
        h = self.h[z]
        if self.draws == 1:
            return ZMomentResult(float(g[0]), 0.0, math.nan)
        return ZMomentResult(
            float(g.mean()),
            float(h.var(ddof=1)),
            float(g.std(ddof=1) / math.sqrt(self.draws)),
        )

    def polynomial(self, values: np.ndarray) -> np.ndarray:
        """Power-basis coefficients of ``E[values[Z]]`` as a polynomial in p.

        Coefficient r is ``C(n, r)`` times the r-th forward difference of
        ``values`` at 0.
        """
        n = self.n
        coefficients = np.empty(n + 1)
        for r in range(n + 1):
            j = np.arange(r + 1)
            signs = np.where((r - j) % 2 == 0, 1.0, -1.0)
            coefficients[r] = comb(n, r, exact=True) * float(
                np.sum(signs * comb(r, j) * values[: r + 1])
            )
        return coefficients

    def _powers(self) -> np.ndarray:
        n = self.n
        if not self.unbiased_powers:
            return self.p_hat ** np.arange(n + 1)
        s = round(self.p_hat * n)
        powers = np.ones(n + 1)
        for r in range(1, n + 1):
            powers[r] = powers[r - 1] * max(s - r + 1, 0) / (n - r + 1)
        return powers

    def _exact_terms(self) -> ZMomentResult:
        powers = self._powers()
        expectation = float(self.polynomial(self.g) @ powers)
        mean_h = float(self.polynomial(self.h) @ powers)
        mean_h2 = float(self.polynomial(self.h**2) @ powers)
        return ZMomentResult(expectation, mean_h2 - mean_h**2, 0.0)


def z_moment_terms(engine: ZMomentEngine) -> ZMomentResult:
    """Expectation and variance terms of the AUPEC variance for ``engine``."""
    return engine.terms()
