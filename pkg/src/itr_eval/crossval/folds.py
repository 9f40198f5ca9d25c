"""Treatment-stratified fold assignment."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..core.errors import InputError
from ..core.models import ExperimentData

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class FoldPlan:
    """Partition of the units into K folds.

    Attributes:
        K: Number of folds.
        fold_of: Fold index (0..K-1) of every unit.
        seed: Seed the partition was drawn with.
        sizes: Units per fold.
        treated_sizes: Treated units per fold.
    """

    K: int
    fold_of: np.ndarray
    seed: int
    sizes: np.ndarray
    treated_sizes: np.ndarray

    @property
    def control_sizes(self) -> np.ndarray:
        return self.sizes - self.treated_sizes

    @property
    def equal(self) -> bool:
        """True when every fold has the same number of units."""
        return bool(np.all(self.sizes == self.sizes[0]))

    @property
    def m(self) -> float:
        """Average fold size."""
        return float(self.sizes.mean())

    def test_mask(self, k: int) -> np.ndarray:
        return self.fold_of == k


def make_folds(data: ExperimentData, K: int, seed: int) -> FoldPlan:
    """Split units into K folds, stratified by treatment.

    Treated units are shuffled and dealt to folds round-robin; control
    units are shuffled and dealt continuing from where the treated units
    stopped. Per-fold treated counts, control counts and total sizes each
    differ by at most one.

    Args:
        data: Experiment to split.
        K: Number of folds, at least 2.
        seed: Seed for the shuffles.

    Returns:
        Deterministic FoldPlan for ``(data, K, seed)``.

    Raises:
        InputError: If K < 2 or some fold would miss an arm.
    """
    if K < 2:
        raise InputError(f"cross-validation needs K >= 2 folds, got {K}")
    if K > min(data.n1, data.n0):
        raise InputError(
            f"K={K} folds cannot each hold a treated and a control unit "
            f"(n1={data.n1}, n0={data.n0})"
        )
    rng = np.random.default_rng(seed)
    treated = rng.permutation(np.flatnonzero(data.treated))
    control = rng.permutation(np.flatnonzero(~data.treated))

    fold_of = np.empty(data.n, dtype=np.int64)
    fold_of[treated] = np.arange(treated.size) % K
    fold_of[control] = (np.arange(control.size) + treated.size) % K
    fold_of.setflags(write=False)

    sizes = np.bincount(fold_of, minlength=K)
    treated_sizes = np.bincount(fold_of[treated], minlength=K)
    plan = FoldPlan(K=K, fold_of=fold_of, seed=seed, sizes=sizes, treated_sizes=treated_sizes)
    if not plan.equal:
        logger.warning("n=%d is not divisible by K=%d; fold sizes differ by one", data.n, K)
    return plan
