"""Configuration management for itr-eval."""

import logging
import os
from logging.handlers import RotatingFileHandler
from pathlib import Path

from .core.errors import InputError

# Logging
LOG_DIR = Path.home() / ".itr_eval/logs"
LOG_FILE_NAME = "itr_eval.log"
LOG_FORMAT = "%(asctime)s %(name)s %(levelname)s %(message)s"
LOG_MAX_BYTES = 5 * 1024 * 1024
LOG_BACKUPS = 3

# Seed fallback for every randomized operation
SEED_ENV = "ITR_EVAL_SEED"
DEFAULT_SEED = 0

# Inference defaults
DEFAULT_ALPHA = 0.05
DEFAULT_FOLDS = 5

# Binomial Z-moment machinery
DEFAULT_MC_DRAWS = 10_000
MC_BLOCK_SIZE = 4_096
EXACT_POLYNOMIAL_MAX_N = 30

# Exhaustive randomization guard, C(n, n1) above this is refused
ENUMERATION_LIMIT = 1_000_000

# |tau_hat| below this times the outcome scale cannot normalize an AUPEC
NORMALIZATION_TOLERANCE = 1e-10

# Learners
DEFAULT_RIDGE_PENALTY = 1e-8
DEFAULT_BIN_COUNT = 4

# Simulation
DEFAULT_POPULATION_SIZE = 4302
DEFAULT_TRIALS = 1_000
EFFECT_SCALES = {
    "high": 2.0,
    "low": 1.0 / 3.0,
}
MAX_TRIAL_REDRAWS = 100


def get_default_seed() -> int:
    """Get the default seed from the environment.

    Checks the ITR_EVAL_SEED environment variable and falls back to
    ``DEFAULT_SEED`` when it is unset or blank.

    Returns:
        Non-negative integer seed.

    Raises:
        InputError: If the variable is set but is not a non-negative integer.
    """
    raw = os.environ.get(SEED_ENV, "").strip()
    if not raw:
        return DEFAULT_SEED
    try:
        seed = int(raw)
    except ValueError:
        raise InputError(f"{SEED_ENV} must be an integer, got {raw!r}") from None
    if seed < 0:
        raise InputError(f"{SEED_ENV} must be non-negative, got {seed}")
    return seed


def load_config_file(path: Path | str) -> dict[str, str]:
    """Read a flat ``key = value`` configuration file.

    Blank lines and lines starting with ``#`` are skipped. Keys mirror the
    command-line flags; dashes are normalized to underscores so that
    ``rule-col = score`` and ``rule_col = score`` are equivalent.

    Args:
        path: Path to the configuration file.

    Returns:
        Mapping of option name to raw string value.

    Raises:
        InputError: If the file is missing or a line has no ``=``.
    """
    path = Path(path)
    if not path.exists():
        raise InputError(f"Config file not found: {path}")

    values: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        if "=" not in text:
            raise InputError(f"{path}:{lineno}: expected 'key = value', got {text!r}")
        key, value = text.split("=", 1)
        key = key.strip().lstrip("-").replace("-", "_")
        if not key:
            raise InputError(f"{path}:{lineno}: empty key")
        values[key] = value.strip()
    return values


def _console_handler(level: int, formatter: logging.Formatter) -> logging.Handler:
    handler = logging.StreamHandler()
    handler.setLevel(level)
    handler.setFormatter(formatter)
    return handler


def _file_handler(path: Path, formatter: logging.Formatter) -> logging.Handler:
    path.parent.mkdir(parents=True, exist_ok=True)
    handler = RotatingFileHandler(
        path, maxBytes=LOG_MAX_BYTES, backupCount=LOG_BACKUPS, encoding="utf-8"
    )
    handler.setLevel(logging.DEBUG)
    handler.setFormatter(formatter)
    return handler


def setup_logging(verbose: bool = False) -> Path:
    """Send the ``itr_eval`` logger namespace to stderr and a rotating log file.

    The console shows INFO and above, or DEBUG with ``verbose``. The file
    ``LOG_DIR / LOG_FILE_NAME`` always records DEBUG, so estimator warnings
    such as clamped variances or unequal folds, and the centering
    shifts of every run are kept there. Module loggers such as
    ``itr_eval.crossval.folds`` propagate to these two handlers.

    A second call keeps the existing handlers and only moves the console
    to the requested level.

    Args:
        verbose: Show DEBUG records on the console.

    Returns:
        Path of the log file.
    """
    level = logging.DEBUG if verbose else logging.INFO
    log_file = LOG_DIR / LOG_FILE_NAME

    package = logging.getLogger("itr_eval")
    package.setLevel(logging.DEBUG)
    if package.handlers:
        for handler in package.handlers:
            if not isinstance(handler, RotatingFileHandler):
                handler.setLevel(level)
        return log_file

    formatter = logging.Formatter(LOG_FORMAT, datefmt="%Y-%m-%d %H:%M:%S")
    package.addHandler(_console_handler(level, formatter))
    package.addHandler(_file_handler(log_file, formatter))
    return log_file
