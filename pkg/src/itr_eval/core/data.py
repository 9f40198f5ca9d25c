"""Loading experiments from CSV and outcome centering."""

from __future__ import annotations

import csv
import io
import logging
from pathlib import Path

import numpy as np
from pydantic import BaseModel, Field

from .errors import DegenerateDataError, InputError
from .models import ExperimentData, Rule

logger = logging.getLogger(__name__)

# Centering shifts smaller than this (relative to the outcome scale) are treated as zero
_CENTER_TOLERANCE = 1e-12


class ColumnSpec(BaseModel):
    """Names of the CSV columns holding each experiment field."""

    outcome: str = Field(default="y", description="Numeric outcome column")
    treatment: str = Field(default="t", description="0/1 treatment column")
    covariates: list[str] = Field(default_factory=list, description="Covariate columns")

    model_config = {"frozen": True}


def read_table(source: Path | str | io.TextIOBase) -> dict[str, list[str]]:
    """Read a headed CSV into a column-name -> raw string values mapping.

    Args:
        source: Path to a CSV file, or an open text stream.

    Returns:
        Mapping of column names to their raw cell values, in row order.

    Raises:
        InputError: If the file does not exist or rows are ragged.
        DegenerateDataError: If the file is empty.
    """
    if isinstance(source, (str, Path)):
        path = Path(source)
        if not path.exists():
            raise InputError(f"Input file not found: {path}")
        with open(path, newline="", encoding="utf-8") as f:
            return read_table(f)

    reader = csv.reader(source)
    header = next(reader, None)
    if not header:
        raise DegenerateDataError("input file is empty")
    header = [name.strip() for name in header]
    columns: dict[str, list[str]] = {name: [] for name in header}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise InputError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        for name, value in zip(header, row):
            columns[name].append(value.strip())
    return columns


def _column(table: dict[str, list[str]], name: str) -> list[str]:
    if name not in table:
        raise InputError(f"missing column {name!r} (available: {', '.join(table)})")
    return table[name]


def numeric_column(table: dict[str, list[str]], name: str) -> np.ndarray:
    """Parse a column as finite floats, rejecting blanks and non-numbers."""
    values = np.empty(len(_column(table, name)), dtype=np.float64)
    for i, raw in enumerate(table[name]):
        if raw == "":
            raise InputError(f"column {name!r}, row {i + 1}: missing value")
        try:
            values[i] = float(raw)
        except ValueError:
            raise InputError(f"column {name!r}, row {i + 1}: not a number: {raw!r}") from None
        if not np.isfinite(values[i]):
            raise InputError(f"column {name!r}, row {i + 1}: value must be finite")
    return values


def experiment_from_table(table: dict[str, list[str]], columns: ColumnSpec) -> ExperimentData:
    """Build a validated ExperimentData from a parsed table.

    Raises:
        InputError: On missing columns, missing values or non-binary treatments.
        DegenerateDataError: With fewer than 2 treated or 2 control units.
    """
    y = numeric_column(table, columns.outcome)
    raw_t = _column(table, columns.treatment)
    t = np.empty(len(raw_t), dtype=np.int8)
    for i, raw in enumerate(raw_t):
        if raw not in ("0", "1"):
            raise InputError(
                f"column {columns.treatment!r}, row {i + 1}: treatment must be 0 or 1, got {raw!r}"
            )
        t[i] = int(raw)

    x = None
    if columns.covariates:
        x = np.column_stack([numeric_column(table, name) for name in columns.covariates])

    data = ExperimentData(y=y, t=t, x=x)
    data.require_arms(minimum=2)
    logger.debug("Loaded experiment: n=%d n1=%d n0=%d", data.n, data.n1, data.n0)
    return data


def rule_from_table(
    table: dict[str, list[str]], name: str, *, fixed: bool = False, c_star: float = -np.inf
) -> Rule:
    """Build a scoring rule (or a fixed 0/1 rule) from one column."""
    values = numeric_column(table, name)
    if fixed:
        return Rule.fixed(values)
    return Rule.scoring(values, c_star=c_star)


def load_experiment(source: Path | str | io.TextIOBase, columns: ColumnSpec) -> ExperimentData:
    """Load and validate an experiment from CSV."""
    return experiment_from_table(read_table(source), columns)


def center_outcomes(data: ExperimentData) -> tuple[ExperimentData, float]:
    """Shift outcomes so that the treated and control means sum to zero.

    Args:
        data: Experiment with at least one unit per arm.

    Returns:
        Tuple of (centered data, shift). When the required shift is zero
        to tolerance the input object itself is returned with shift 0.0,
        which makes centering idempotent.
    """
    data.require_arms(minimum=1)
    delta = -0.5 * (data.treated_mean + data.control_mean)
    if abs(delta) <= _CENTER_TOLERANCE * data.outcome_scale:
        return data, 0.0
    return data.with_outcomes(data.y + delta), delta
