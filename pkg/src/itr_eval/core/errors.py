"""Exception hierarchy shared by the library and the CLI.

Every exception carries the process exit code the CLI reports for it.
"""


class ItrEvalError(Exception):
    """Base class for all itr-eval errors."""

    exit_code = 1


class InputError(ItrEvalError, ValueError):
    """Invalid input: bad columns, out-of-range parameters, contract violations."""

    exit_code = 2


class DegenerateDataError(InputError):
    """Data that cannot support the requested computation (empty arms, one-arm data)."""


class FoldDegenerateError(DegenerateDataError):
    """A cross-validation fold could not be evaluated."""

    def __init__(self, fold: int, reason: str) -> None:
        super().__init__(f"fold {fold}: {reason}")
        self.fold = fold
        self.reason = reason


class LearnerFitError(InputError):
    """A learner could not be fit on its training data."""


class NumericDegeneracyError(ItrEvalError, ArithmeticError):
    """A quantity needed as a divisor is numerically zero."""

    exit_code = 3


class SizeGuardError(ItrEvalError):
    """A combinatorial computation exceeds its configured size guard."""

    exit_code = 4
