"""Cross-fold covariance of estimated treatment assignments.

Rules fit on different training folds disagree on some units. The
cross-validated variances need the expected covariance of two units'
assignments, weighted by outcome products, estimated from the K fitted
rules. ``pair_covariance`` evaluates the pairwise average in O(nK);
``pair_covariance_naive`` is the literal double sum over unit pairs.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from ..core.errors import InputError
from ..core.models import ExperimentData


def _check(fold_rules: np.ndarray, *vectors: np.ndarray) -> np.ndarray:
    fold_rules = np.atleast_2d(np.asarray(fold_rules, dtype=np.float64))
    n = fold_rules.shape[1]
    for vector in vectors:
        if np.shape(vector) != (n,):
            raise InputError(f"per-unit vectors must have length {n}")
    return fold_rules


def pair_covariance(
    fold_rules: np.ndarray, a: np.ndarray, b: np.ndarray, u: np.ndarray, v: np.ndarray
) -> float:
    """Weighted average over pairs i != j of the cross-fold assignment covariance.

    Computes

        sum_{i != j} a_i b_j C_ij  /  sum_{i != j} u_i v_j

    where ``C_ij = mean_k f_ki f_kj - mean_k f_ki * mean_k f_kj`` and
    ``fold_rules[k]`` is the assignment of the rule fit without fold k,
    applied to every unit.

    Args:
        fold_rules: K x n matrix of assignments.
        a: Per-unit weight of the first unit of each pair.
        b: Per-unit weight of the second unit.
        u: Per-unit count of the first unit (denominator).
        v: Per-unit count of the second unit.

    Returns:
        The weighted average, or NaN when no pair is counted.
    """
    F = _check(fold_rules, a, b, u, v)
    K = F.shape[0]
    a, b, u, v = (np.asarray(x, dtype=np.float64) for x in (a, b, u, v))

    pairs = float(u.sum() * v.sum() - u @ v)
    if pairs == 0:
        return math.nan
    A = F @ a
    B = F @ b
    joint = float(A @ B - ((F * F) @ (a * b)).sum())
    f_sum = F.sum(axis=0)
    marginal = float((a @ f_sum) * (b @ f_sum) - np.sum(a * b * f_sum**2))
    return joint / (K * pairs) - marginal / (K**2 * pairs)


def pair_covariance_naive(
    fold_rules: np.ndarray, a: np.ndarray, b: np.ndarray, u: np.ndarray, v: np.ndarray
) -> float:
    """Reference O(n^2 K) evaluation of :func:`pair_covariance`."""
    F = _check(fold_rules, a, b, u, v)
    n = F.shape[1]
    f_bar = F.mean(axis=0)
    numerator = 0.0
    denominator = 0.0
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            c_ij = float(np.mean(F[:, i] * F[:, j])) - f_bar[i] * f_bar[j]
            numerator += a[i] * b[j] * c_ij
            denominator += u[i] * v[j]
    if denominator == 0:
        return math.nan
    return numerator / denominator


class RuleCovariances(NamedTuple):
    """Expected cross-fold assignment covariances weighted by effects.

    ``plain`` is E{C_ij}, ``effect`` is E{C_ij tau_i} and ``effect_pair``
    is E{C_ij tau_i tau_j}, all over pairs i != j.
    """

    plain: float
    effect: float
    effect_pair: float


def _outcome_pair(fold_rules: np.ndarray, data: ExperimentData, s: int, t: int) -> float:
    """E{C_ij Y_i(s) Y_j(t)} from units observed under arms s and t."""
    arm_s = (data.t == s).astype(np.float64)
    arm_t = (data.t == t).astype(np.float64)
    return pair_covariance(fold_rules, arm_s * data.y, arm_t * data.y, arm_s, arm_t)


def _outcome_single(fold_rules: np.ndarray, data: ExperimentData, s: int) -> float:
    """E{C_ij Y_i(s)} from units observed under arm s."""
    arm_s = (data.t == s).astype(np.float64)
    ones = np.ones(data.n)
    return pair_covariance(fold_rules, arm_s * data.y, ones, arm_s, ones)


def pairwise_rule_covariance(fold_rules: np.ndarray, data: ExperimentData) -> RuleCovariances:
    """Effect-weighted covariance terms for the K fitted rules on ``data``.

    Unit effects are never observed, so ``tau_i tau_j`` is expanded into the
    four products ``Y_i(s) Y_j(t)`` and each is estimated from the units
    observed in arms s and t.
    """
    F = _check(fold_rules, data.y)
    ones = np.ones(data.n)
    plain = pair_covariance(F, ones, ones, ones, ones)
    effect = _outcome_single(F, data, 1) - _outcome_single(F, data, 0)
    effect_pair = (
        _outcome_pair(F, data, 1, 1)
        - _outcome_pair(F, data, 1, 0)
        - _outcome_pair(F, data, 0, 1)
        + _outcome_pair(F, data, 0, 0)
    )
    return RuleCovariances(plain=plain, effect=effect, effect_pair=effect_pair)
