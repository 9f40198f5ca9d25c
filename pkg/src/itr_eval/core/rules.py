"""Budget thresholding and assignment vectors for treatment rules."""

from __future__ import annotations

import math

import numpy as np

from .errors import InputError
from .models import Rule

# Absorbs binary representation error in n * p (0.29 * 100 = 28.999...)
_FLOOR_SLACK = 1e-9


def budget_count(n: int, p: float) -> int:
    """Number of units a budget ``p`` allows to be treated, ``floor(n * p)``."""
    if not 0.0 <= p <= 1.0:
        raise InputError(f"budget must be in [0, 1], got {p}")
    return min(n, math.floor(n * p + _FLOOR_SLACK))


def rank_order(scores: np.ndarray) -> np.ndarray:
    """Unit indices sorted by descending score, ties broken by ascending index."""
    scores = np.asarray(scores, dtype=np.float64)
    return np.lexsort((np.arange(scores.size), -scores))


def ranks(scores: np.ndarray) -> np.ndarray:
    """1-based rank of every unit under :func:`rank_order` (rank 1 = top score)."""
    order = rank_order(scores)
    result = np.empty(order.size, dtype=np.int64)
    result[order] = np.arange(1, order.size + 1)
    return result


def top_k(scores: np.ndarray, k: int) -> np.ndarray:
    """0/1 vector treating the ``k`` highest-ranked units."""
    scores = np.asarray(scores)
    f = np.zeros(scores.size, dtype=np.int8)
    f[rank_order(scores)[:k]] = 1
    return f


def threshold_for_budget(rule: Rule, p: float) -> tuple[float, np.ndarray]:
    """Estimated threshold and treated set for a budget.

    Treats exactly the ``floor(n * p)`` best-ranked units.

    Args:
        rule: A scoring rule.
        p: Maximal proportion of units to treat.

    Returns:
        Tuple of (threshold, treated_indices). The threshold is the score
        of the first untreated unit, ``-inf`` when everyone is treated and
        ``+inf`` when nobody is. Indices are in rank order.

    Raises:
        InputError: If the rule is not a scoring rule or ``p`` is outside [0, 1].
    """
    if not rule.is_scoring:
        raise InputError("a budget requires a scoring rule")
    n = rule.n
    k = budget_count(n, p)
    order = rank_order(rule.values)
    if k == 0:
        threshold = math.inf
    elif k == n:
        threshold = -math.inf
    else:
        threshold = float(rule.values[order[k]])
    return threshold, order[:k]


def assignments(rule: Rule, budget: float | None = None) -> np.ndarray:
    """0/1 treatment vector implied by a rule.

    Fixed rules return their own assignment. Scoring rules treat the top
    ``floor(n * budget)`` units when a budget is given, and otherwise every
    unit whose score exceeds ``rule.c_star``.

    Raises:
        InputError: If a budget is combined with a fixed rule.
    """
    if not rule.is_scoring:
        if budget is not None:
            raise InputError("a budget cannot be applied to a fixed assignment rule")
        return rule.values.copy()
    if budget is not None:
        return top_k(rule.values, budget_count(rule.n, budget))
    return (rule.values > rule.c_star).astype(np.int8)
