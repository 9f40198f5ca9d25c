"""Command-line interface for itr-eval."""

import csv
import io
import json
import logging
import math
import sys
from collections.abc import Iterator
from contextlib import contextmanager
from pathlib import Path
from typing import Any

import click
from pydantic import ValidationError
from rich.console import Console
from rich.progress import BarColumn, Progress, SpinnerColumn, TaskProgressColumn, TextColumn
from rich.table import Table

from . import __version__
from .config import DEFAULT_ALPHA, DEFAULT_FOLDS, DEFAULT_MC_DRAWS, get_default_seed
from .core.data import (
    ColumnSpec,
    center_outcomes,
    experiment_from_table,
    numeric_column,
    read_table,
    rule_from_table,
)
from .core.errors import InputError, ItrEvalError
from .core.models import (
    ExperimentData,
    Metric,
    MetricEstimate,
    MetricSpec,
    PotentialPopulation,
    Rule,
)
from .estimation.fixed import attach_bias_bound, estimate_aupec, estimate_metric
from .estimation.variance import ZMode

logger = logging.getLogger(__name__)

# Reports go to stdout; everything for humans goes to stderr
console = Console(stderr=True)

REPORT_FIELDS = [
    "metric",
    "point",
    "se",
    "ci_lower",
    "ci_upper",
    "alpha",
    "proportion_treated",
    "budget",
    "n",
    "n1",
    "n0",
    "seed",
    "diagnostics",
]


@contextmanager
def handle_errors() -> Iterator[None]:
    """Report library errors in red and exit with their exit code."""
    try:
        yield
    except ItrEvalError as e:
        console.print(f"[red]Error: {e}[/red]")
        sys.exit(e.exit_code)
    except ValidationError as e:
        console.print(f"[red]Invalid settings: {e}[/red]")
        sys.exit(InputError.exit_code)


def _seed(seed: int | None) -> int:
    return get_default_seed() if seed is None else seed


def _json_safe(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return None if math.isnan(value) else str(value)
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    return value


def _format_diagnostics(diagnostics: dict[str, float]) -> str:
    return ";".join(f"{key}={diagnostics[key]:.10g}" for key in sorted(diagnostics))


def emit(records: list[dict[str, Any]], fields: list[str], output: str | None, as_json: bool):
    """Write records as CSV (default) or JSON to ``output`` or stdout."""
    if as_json:
        text = json.dumps([_json_safe(r) for r in records], indent=2, sort_keys=True) + "\n"
    else:
        buffer = io.StringIO()
        writer = csv.DictWriter(buffer, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for record in records:
            row = dict(record)
            if isinstance(row.get("diagnostics"), dict):
                row["diagnostics"] = _format_diagnostics(row["diagnostics"])
            writer.writerow(row)
        text = buffer.getvalue()

    if output:
        Path(output).write_text(text, encoding="utf-8")
        console.print(f"[green]✓[/green] Wrote {len(records)} rows to {output}")
    else:
        click.echo(text, nl=False)


def estimate_record(estimate: MetricEstimate, alpha: float, seed: int) -> dict[str, Any]:
    """Report fields of one estimate."""
    lower, upper = estimate.confidence_interval(alpha)
    return {
        "metric": estimate.metric.value,
        "point": estimate.point,
        "se": estimate.std_error,
        "ci_lower": lower,
        "ci_upper": upper,
        "alpha": alpha,
        "proportion_treated": estimate.proportion_treated,
        "budget": "" if estimate.budget is None else estimate.budget,
        "n": estimate.n_used,
        "n1": estimate.n1,
        "n0": estimate.n0,
        "seed": seed,
        "diagnostics": dict(estimate.diagnostics),
    }


_FLAG_KEYS = {
    "variance_clamped": "A negative variance estimate was clamped to zero.",
    "variance_unavailable": "Some variance terms could not be estimated (std. error is NaN).",
    "kappa_substituted": "Kappa terms at the threshold were substituted from the nearest budget.",
    "folds_unequal": "Fold sizes differ by one unit.",
    "bias_cap_plugin": "Bias bound uses the plug-in CATE cap.",
}


def show_estimates(title: str, rows: list[tuple[str, MetricEstimate]], alpha: float) -> None:
    """Rich summary table of estimates on stderr."""
    table = Table(title=title, show_header=True, header_style="bold")
    table.add_column("Metric", style="cyan")
    table.add_column("Estimate", justify="right")
    table.add_column("Std. error", justify="right")
    table.add_column(f"{100 * (1 - alpha):g}% CI", justify="right")
    table.add_column("p", justify="right")
    for label, est in rows:
        lower, upper = est.confidence_interval(alpha)
        table.add_row(
            label,
            f"{est.point:.4f}",
            f"{est.std_error:.4f}",
            f"[{lower:.4f}, {upper:.4f}]",
            f"{est.proportion_treated:.3f}",
        )
    console.print(table)
    flags = {k for _, est in rows for k, v in est.diagnostics.items() if k in _FLAG_KEYS and v}
    for flag in sorted(flags):
        console.print(f"[yellow]{_FLAG_KEYS[flag]}[/yellow]")


# ============================================================================
# Shared options
# ============================================================================


def _input_options(func):
    options = [
        click.option(
            "--input",
            "-i",
            "input_path",
            required=True,
            type=click.Path(dir_okay=False),
            help="Experiment CSV file",
        ),
        click.option("--outcome-col", default="y", show_default=True, help="Outcome column"),
        click.option("--treatment-col", default="t", show_default=True, help="0/1 treatment column"),
        click.option(
            "--no-center",
            is_flag=True,
            help="Do not center outcomes before estimating PAPE, PAPD or AUPEC metrics",
        ),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _report_options(func):
    options = [
        click.option("--alpha", type=float, default=DEFAULT_ALPHA, show_default=True),
        click.option("--seed", type=int, default=None, help="Seed (default: $ITR_EVAL_SEED or 0)"),
        click.option("--output", "-o", type=click.Path(dir_okay=False), help="Write report here"),
        click.option("--json", "as_json", is_flag=True, help="Emit JSON instead of CSV"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _z_options(func):
    options = [
        click.option(
            "--z-mode",
            type=click.Choice([m.value for m in ZMode]),
            default=ZMode.MONTE_CARLO.value,
            show_default=True,
            help="Evaluation of the binomial moments in the AUPEC variance",
        ),
        click.option("--draws", type=int, default=DEFAULT_MC_DRAWS, show_default=True),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _bias_options(func):
    options = [
        click.option("--epsilon", type=float, default=None, help="Report the bias bound at epsilon"),
        click.option("--cate-cap", type=float, default=None, help="Upper bound on |CATE|"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _load(
    input_path: str,
    outcome_col: str,
    treatment_col: str,
    covariates: tuple[str, ...] = (),
) -> tuple[dict[str, list[str]], ExperimentData]:
    table = read_table(input_path)
    columns = ColumnSpec(outcome=outcome_col, treatment=treatment_col, covariates=list(covariates))
    return table, experiment_from_table(table, columns)


def _center(data: ExperimentData, kind: Metric, no_center: bool) -> tuple[ExperimentData, float]:
    if no_center or not kind.centers_outcomes:
        return data, 0.0
    centered, delta = center_outcomes(data)
    if delta:
        logger.debug("Centered outcomes by %.6g for %s", delta, kind.value)
    return centered, delta


def _with_shift(estimate: MetricEstimate, delta: float) -> MetricEstimate:
    if not delta:
        return estimate
    diagnostics = dict(estimate.diagnostics)
    diagnostics["center_shift"] = delta
    return estimate.model_copy(update={"diagnostics": diagnostics})


def _metric_spec(metric: str, budget: float | None, c_star: float) -> MetricSpec:
    kind = Metric(metric)
    if kind is Metric.PAPE and budget is not None:
        kind = Metric.PAPE_BUDGET
    return MetricSpec(kind=kind, budget=budget, c_star=c_star)


def _covariate_list(text: str | None) -> tuple[str, ...]:
    if not text:
        return ()
    return tuple(name.strip() for name in text.split(",") if name.strip())


# Config keys that differ from the parameter names they set
_CONFIG_ALIASES = {"input": "input_path", "json": "as_json", "n": "sample_size"}


@click.group()
@click.version_option(version=__version__)
@click.option(
    "--verbose",
    "-v",
    is_flag=True,
    envvar="ITR_EVAL_VERBOSE",
    help="Enable debug logging to console and log file.",
)
@click.option(
    "--config",
    "config_path",
    type=click.Path(dir_okay=False),
    default=None,
    help="Flat 'key = value' file of option defaults; flags override it.",
)
@click.pass_context
def cli(ctx: click.Context, verbose: bool, config_path: str | None):
    """Evaluate individualized treatment rules on randomized experiments."""
    from .config import load_config_file, setup_logging

    setup_logging(verbose=verbose)
    if config_path:
        with handle_errors():
            values = load_config_file(config_path)
        defaults = {_CONFIG_ALIASES.get(key, key): value for key, value in values.items()}
        ctx.default_map = {name: dict(defaults) for name in cli.commands}


# ============================================================================
# Fixed rules
# ============================================================================


@cli.command("evaluate")
@_input_options
@click.option("--rule-col", required=True, help="Column with the rule's scores (or 0/1 values)")
@click.option("--fixed-rule", is_flag=True, help="Treat the rule column as a 0/1 assignment")
@click.option(
    "--metric",
    type=click.Choice(["pav", "pape", "sape", "pape_budget", "aupec", "aupec_norm"]),
    default="pape",
    show_default=True,
)
@click.option("--budget", type=float, default=None, help="Maximal proportion treated")
@click.option("--c-star", type=float, default=-math.inf, help="Minimum score treated")
@_bias_options
@_z_options
@_report_options
def evaluate(
    input_path: str,
    outcome_col: str,
    treatment_col: str,
    no_center: bool,
    rule_col: str,
    fixed_rule: bool,
    metric: str,
    budget: float | None,
    c_star: float,
    epsilon: float | None,
    cate_cap: float | None,
    z_mode: str,
    draws: int,
    alpha: float,
    seed: int | None,
    output: str | None,
    as_json: bool,
):
    """Estimate one metric for a pre-specified rule."""
    with handle_errors():
        seed = _seed(seed)
        table, data = _load(input_path, outcome_col, treatment_col)
        rule = rule_from_table(table, rule_col, fixed=fixed_rule, c_star=c_star)
        spec = _metric_spec(metric, budget, c_star)
        data, delta = _center(data, spec.kind, no_center)
        estimate = estimate_metric(data, spec, rule, z_mode=ZMode(z_mode), draws=draws, seed=seed)
        if epsilon is not None:
            estimate = attach_bias_bound(estimate, epsilon, cate_cap)
        estimate = _with_shift(estimate, delta)
        show_estimates(f"{spec.label} of {rule_col}", [(spec.label, estimate)], alpha)
        emit([estimate_record(estimate, alpha, seed)], REPORT_FIELDS, output, as_json)


@cli.command("compare")
@_input_options
@click.option("--rule-col", required=True, help="Scores of rule f")
@click.option("--rule-col-g", required=True, help="Scores of rule g")
@click.option(
    "--budget",
    type=float,
    default=None,
    help="Compare budgeted PAPEs (PAPD); without it the average values are compared",
)
@click.option("--c-star", type=float, default=-math.inf, help="Minimum score treated")
@_bias_options
@_report_options
def compare(
    input_path: str,
    outcome_col: str,
    treatment_col: str,
    no_center: bool,
    rule_col: str,
    rule_col_g: str,
    budget: float | None,
    c_star: float,
    epsilon: float | None,
    cate_cap: float | None,
    alpha: float,
    seed: int | None,
    output: str | None,
    as_json: bool,
):
    """Compare two rules: PAPD under a budget, or the difference in average values."""
    with handle_errors():
        seed = _seed(seed)
        table, data = _load(input_path, outcome_col, treatment_col)
        rule_f = rule_from_table(table, rule_col, c_star=c_star)
        rule_g = rule_from_table(table, rule_col_g, c_star=c_star)
        kind = Metric.VALUE_DIFF if budget is None else Metric.PAPD_BUDGET
        spec = MetricSpec(kind=kind, budget=budget, c_star=c_star)
        data, delta = _center(data, kind, no_center)
        estimate = estimate_metric(data, spec, rule_f, rule_g, seed=seed)
        if epsilon is not None:
            estimate = attach_bias_bound(estimate, epsilon, cate_cap)
        estimate = _with_shift(estimate, delta)
        show_estimates(f"{rule_col} vs {rule_col_g}", [(spec.label, estimate)], alpha)
        emit([estimate_record(estimate, alpha, seed)], REPORT_FIELDS, output, as_json)


@cli.command("curve")
@_input_options
@click.option("--rule-col", required=True, help="Column with the rule's scores")
@click.option("--c-star", type=float, default=-math.inf, help="Minimum score treated")
@_z_options
@_report_options
def curve(
    input_path: str,
    outcome_col: str,
    treatment_col: str,
    no_center: bool,
    rule_col: str,
    c_star: float,
    z_mode: str,
    draws: int,
    alpha: float,
    seed: int | None,
    output: str | None,
    as_json: bool,
):
    """Prescriptive effect curve: value and PAPE at every budget k/n."""
    with handle_errors():
        seed = _seed(seed)
        table, data = _load(input_path, outcome_col, treatment_col)
        rule = rule_from_table(table, rule_col, c_star=c_star)
        data, delta = _center(data, Metric.AUPEC, no_center)
        result = estimate_aupec(
            data,
            rule,
            c_star,
            z_mode=ZMode(z_mode),
            draws=draws,
            seed=seed,
            outcome_shift=delta,
        )
        aupec = _with_shift(result.aupec, delta)
        show_estimates(f"AUPEC of {rule_col}", [("aupec", aupec)], alpha)
        records = [
            {"p": point.budget, "value": point.value, "pape": point.pape, "se": point.std_error}
            for point in result.points
        ]
        emit(records, ["p", "value", "pape", "se"], output, as_json)


# ============================================================================
# Cross-validation
# ============================================================================


@cli.command("crossval")
@_input_options
@click.option("--covariates", required=True, help="Comma-separated covariate columns")
@click.option(
    "--learner",
    default="linear_t",
    show_default=True,
    help="Learner as kind[:key=value,...], e.g. linear_t:ridge=0.1",
)
@click.option("--learner-g", default=None, help="Comparison learner for papd")
@click.option(
    "--metric",
    type=click.Choice(["pav", "pape", "pape_budget", "papd", "aupec"]),
    default="pape",
    show_default=True,
)
@click.option("--budget", type=float, default=None, help="Maximal proportion treated")
@click.option("--c-star", type=float, default=-math.inf, help="Minimum score treated")
@click.option("--folds", "-k", type=int, default=DEFAULT_FOLDS, show_default=True)
@click.option("--threads", type=int, default=1, show_default=True, help="Parallel fold workers")
@_z_options
@_report_options
def crossval_cmd(
    input_path: str,
    outcome_col: str,
    treatment_col: str,
    no_center: bool,
    covariates: str,
    learner: str,
    learner_g: str | None,
    metric: str,
    budget: float | None,
    c_star: float,
    folds: int,
    threads: int,
    z_mode: str,
    draws: int,
    alpha: float,
    seed: int | None,
    output: str | None,
    as_json: bool,
):
    """Learn rules by K-fold cross-validation and evaluate them."""
    from .crossval import crossval
    from .learners import LearnerSpec

    with handle_errors():
        seed = _seed(seed)
        _, data = _load(input_path, outcome_col, treatment_col, _covariate_list(covariates))
        if metric == "papd":
            if learner_g is None:
                raise InputError("--metric papd needs --learner-g")
            spec = MetricSpec(kind=Metric.PAPD_BUDGET, budget=budget)
        else:
            spec = _metric_spec(metric, budget, c_star)
        data, delta = _center(data, spec.kind, no_center)
        result = crossval(
            data,
            LearnerSpec.parse(learner),
            spec,
            folds,
            seed,
            None if learner_g is None else LearnerSpec.parse(learner_g),
            max_workers=threads,
            z_mode=ZMode(z_mode),
            draws=draws,
        )
        pooled = _with_shift(result.pooled, delta)
        rows = [(f"fold {fe.fold}", fe.estimate) for fe in result.per_fold]
        show_estimates(f"Cross-validated {spec.label}", [*rows, ("pooled", pooled)], alpha)

        records = []
        for fe in result.per_fold:
            records.append({"fold": fe.fold, **estimate_record(fe.estimate, alpha, seed)})
        records.append({"fold": "pooled", **estimate_record(pooled, alpha, seed)})
        emit(records, ["fold", *REPORT_FIELDS], output, as_json)


# ============================================================================
# Simulation and oracle
# ============================================================================


_SIM_METRICS = {
    "pape": lambda budget: MetricSpec(kind=Metric.PAPE, c_star=0.0),
    "pape_budget": lambda budget: MetricSpec(kind=Metric.PAPE_BUDGET, budget=budget),
    "aupec": lambda budget: MetricSpec(kind=Metric.AUPEC, c_star=0.0),
    "papd": lambda budget: MetricSpec(kind=Metric.PAPD_BUDGET, budget=budget),
    "pav": lambda budget: MetricSpec(kind=Metric.PAV, c_star=0.0),
}


@cli.command("simulate")
@click.option(
    "--scenario",
    type=click.Choice(["low", "high", "both"]),
    default="both",
    show_default=True,
    help="Treatment effect size",
)
@click.option("--n", "sample_size", type=int, default=100, show_default=True)
@click.option("--trials", type=int, default=1000, show_default=True)
@click.option(
    "--mode", type=click.Choice(["fixed", "crossval"]), default="fixed", show_default=True
)
@click.option("--folds", "-k", type=int, default=DEFAULT_FOLDS, show_default=True)
@click.option(
    "--metrics",
    default="pape,pape_budget,aupec,papd",
    show_default=True,
    help=f"Comma-separated subset of {', '.join(_SIM_METRICS)}",
)
@click.option("--budget", type=float, default=0.2, show_default=True)
@click.option(
    "--covariates-csv",
    type=click.Path(dir_okay=False),
    default=None,
    help="Covariate population CSV (default: synthetic population)",
)
@click.option("--truth-replications", type=int, default=None, help="Samples for cv truths")
@click.option(
    "--no-center",
    is_flag=True,
    help="Do not center outcomes before estimating PAPE, PAPD or AUPEC metrics",
)
@click.option("--threads", type=int, default=1, show_default=True, help="Parallel trial workers")
@_report_options
def simulate(
    scenario: str,
    sample_size: int,
    trials: int,
    mode: str,
    folds: int,
    metrics: str,
    budget: float,
    covariates_csv: str | None,
    truth_replications: int | None,
    no_center: bool,
    threads: int,
    alpha: float,
    seed: int | None,
    output: str | None,
    as_json: bool,
):
    """Monte Carlo coverage study on the simulated experiment."""
    from .simulation import CoverageMode, CoverageReport, CovariateSource, DgpConfig
    from .simulation.coverage import REPORT_FIELDS as COVERAGE_FIELDS
    from .simulation.coverage import coverage_study

    with handle_errors():
        seed = _seed(seed)
        names = [m.strip() for m in metrics.split(",") if m.strip()]
        unknown = [m for m in names if m not in _SIM_METRICS]
        if unknown:
            raise InputError(f"unknown simulation metrics: {', '.join(unknown)}")
        specs = [_SIM_METRICS[m](budget) for m in names]
        scenarios = ["low", "high"] if scenario == "both" else [scenario]
        source = {}
        if covariates_csv:
            source = {
                "covariate_source": CovariateSource.USER_CSV,
                "covariate_path": Path(covariates_csv),
            }

        report = CoverageReport()
        for name in scenarios:
            config = DgpConfig.for_scenario(
                name, n=sample_size, trials=trials, seed=seed, **source
            )
            with Progress(
                SpinnerColumn(),
                TextColumn("[progress.description]{task.description}"),
                BarColumn(),
                TaskProgressColumn(),
                console=console,
            ) as progress:
                task = progress.add_task(f"Scenario {name}...", total=trials)
                report.extend(
                    coverage_study(
                        config,
                        specs,
                        CoverageMode(mode),
                        folds=folds,
                        alpha=alpha,
                        center=not no_center,
                        truth_replications=truth_replications,
                        max_workers=threads,
                        callback=lambda index, outcome: progress.advance(task),
                    )
                )

        table = Table(title="Coverage", show_header=True, header_style="bold")
        for column in ("Scenario", "Metric", "Truth", "Bias", "SD", "Mean SE", "Coverage"):
            table.add_column(column, justify="left" if column in ("Scenario", "Metric") else "right")
        for row in report.rows:
            table.add_row(
                row.scenario,
                row.metric,
                f"{row.truth:.3f}",
                f"{row.bias:.3f}",
                f"{row.sd:.3f}",
                f"{row.mean_se:.3f}",
                f"{100 * row.coverage:.1f}%",
            )
        console.print(table)

        records = []
        for row in report.rows:
            record = row.model_dump()
            record["mode"] = row.mode.value
            records.append(record)
        emit(records, COVERAGE_FIELDS, output, as_json)


@cli.command("oracle-check")
@click.option(
    "--input",
    "-i",
    "input_path",
    required=True,
    type=click.Path(dir_okay=False),
    help="Potential-outcome CSV with y0, y1 and score columns",
)
@click.option("--score-col", default="score", show_default=True)
@click.option(
    "--metric",
    type=click.Choice(["pav", "pape", "sape", "pape_budget", "aupec", "aupec_norm"]),
    default="sape",
    show_default=True,
)
@click.option("--budget", type=float, default=None, help="Maximal proportion treated")
@click.option("--c-star", type=float, default=-math.inf, help="Minimum score treated")
@click.option("--n1", type=int, default=None, help="Treated units per assignment (default n/2)")
@click.option("--threads", type=int, default=1, show_default=True)
@click.option("--output", "-o", type=click.Path(dir_okay=False), help="Write report here")
@click.option("--json", "as_json", is_flag=True, help="Emit JSON instead of CSV")
def oracle_check(
    input_path: str,
    score_col: str,
    metric: str,
    budget: float | None,
    c_star: float,
    n1: int | None,
    threads: int,
    output: str | None,
    as_json: bool,
):
    """Compare an estimator's exact randomization distribution with the truth."""
    from .core.rules import assignments
    from .oracle import enumerate_randomizations, sape_variance, true_metric

    with handle_errors():
        table = read_table(input_path)
        pop = PotentialPopulation(
            y0=numeric_column(table, "y0"),
            y1=numeric_column(table, "y1"),
            scores=numeric_column(table, score_col),
        )
        spec = _metric_spec(metric, budget, c_star)
        n1 = pop.n // 2 if n1 is None else n1
        truth = true_metric(pop, None, spec)
        distribution = enumerate_randomizations(pop, n1, spec, max_workers=threads)
        record: dict[str, Any] = {
            "metric": spec.label,
            "n": pop.n,
            "n1": n1,
            "assignments": distribution.count,
            "truth": truth,
            "mean": distribution.mean,
            "bias": distribution.mean - truth,
            "variance": distribution.variance,
            "closed_form_variance": "",
        }
        if spec.kind in (Metric.SAPE, Metric.PAPE_BUDGET):
            rule = Rule.scoring(pop.scores, c_star=spec.c_star)
            f = assignments(rule, spec.budget)
            record["closed_form_variance"] = sape_variance(pop, f, n1, spec.budget)

        console.print(
            f"[bold]{spec.label}[/bold]: truth {truth:.6g}, randomization mean "
            f"{distribution.mean:.6g} over {distribution.count} assignments"
        )
        emit([record], list(record), output, as_json)


def main():
    """Entry point."""
    cli()


if __name__ == "__main__":
    main()
