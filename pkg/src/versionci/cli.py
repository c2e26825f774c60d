"""Command line interface: versionci <subcommand> [options]"""
import os
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional

import typer
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .balance import balance_table, set_structure_table
from .cohort import Cohort, FullMatch, VersionArm
from .cohort_loader import ColumnSpec, cohort_to_frame, load_csv, write_csv
from .config import NUMERIC, get_settings
from .debug_logger import setup_logging
from .error_handler import CohortValidationError, DomainError, error_handler
from .interval_engine import IntervalLabel, VersionData, interval_family
from .matching import RatioConstraint, full_match_cohort
from .performance_monitor import perf_monitor
from .rand_test import NullMethod, NullSpec, StatisticKind, StatisticSpec, test
from .report_generator import report_generator
from .sensitivity import (
    AmplifyPair,
    GammaSpec,
    amplify,
    amplify_curve,
    gamma_pvalue_bound,
    masking_gamma,
    sensitivity_interval,
)
from .sim_lab import SimDesign, power_study, power_grid
from .utils import parse_ratio, validate_alpha

app = typer.Typer(
    name="versionci",
    help="Randomization inference for matched studies with two versions of control.",
    add_completion=False,
    no_args_is_help=True,
)


STDOUT_TARGETS = {'-', 'json', 'csv'}


class Subcommand(str, Enum):
    MATCH = "match"
    BALANCE = "balance"
    TEST = "test"
    CI = "ci"
    SENSITIVITY = "sensitivity"
    AMPLIFY = "amplify"
    SIMULATE = "simulate"
    PLOTDATA = "plotdata"


class RunConfig(BaseModel):
    """Everything one subcommand needs; a pure function of its fields"""

    model_config = ConfigDict(frozen=True)

    subcommand: Subcommand
    input: Optional[Path] = None
    input_all: Optional[Path] = None
    input_a: Optional[Path] = None
    input_b: Optional[Path] = None
    columns: ColumnSpec = Field(default_factory=ColumnSpec)
    alpha: float = NUMERIC.alpha
    gammas: List[float] = Field(default_factory=lambda: [1.0])
    stat: StatisticSpec = Field(default_factory=StatisticSpec)
    null: NullSpec = Field(default_factory=NullSpec)
    seed: int = 0
    output: Optional[Path] = None
    params: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode='after')
    def _check(self) -> "RunConfig":
        validate_alpha(self.alpha)
        for gamma in self.gammas:
            GammaSpec(gamma=gamma)
        return self


def _config(**kwargs: Any) -> RunConfig:
    try:
        return RunConfig(**kwargs)
    except ValidationError as e:
        errors = [f"{err['loc']}: {err['msg']}" for err in e.errors(include_url=False)]
        raise DomainError(f"Invalid options: {errors[0]}", {'errors': errors}) from e


def _matched(cohort: Cohort) -> FullMatch:
    if cohort.sets is None:
        raise CohortValidationError("input has no matched sets; run `versionci match` first")
    return FullMatch.from_cohort(cohort)


def _version_data(cfg: RunConfig) -> VersionData:
    paths = {'all': cfg.input_all, 'a': cfg.input_a, 'b': cfg.input_b}
    matches = {}
    for name, path in paths.items():
        if path is None:
            raise DomainError(f"missing --input-{name}")
        matches[name] = _matched(load_csv(path, cfg.columns))
    return VersionData(all=matches['all'], only_a=matches['a'], only_b=matches['b'])


def _out_path(out: Optional[str]) -> Optional[Path]:
    """--out target: a file, or stdout for "-" and the bare format names"""
    if out is None or out.strip().lower() in STDOUT_TARGETS:
        return None
    return Path(out)


def _require_input(cfg: RunConfig) -> Path:
    if cfg.input is None:
        raise DomainError("missing --input")
    return cfg.input


def _run_match(cfg: RunConfig) -> None:
    cohort = load_csv(_require_input(cfg), cfg.columns)
    controls, treated = parse_ratio(cfg.params.get('ratio', '6:6'))
    ratio = RatioConstraint(max_controls_per_treated=controls, max_treated_per_control=treated)
    matched, result = full_match_cohort(cohort, ratio, cfg.params.get('caliper'))
    if cfg.output is None:
        report_generator.emit(report_generator.frame_to_csv(cohort_to_frame(matched, cfg.columns)))
    else:
        write_csv(matched, cfg.output, cfg.columns)
    report_path = cfg.params.get('report')
    if report_path is not None:
        report_generator.emit(report_generator.match_report(result, set_structure_table(matched)),
                              Path(report_path))


def _run_balance(cfg: RunConfig) -> None:
    cohort = load_csv(_require_input(cfg), cfg.columns)
    match = _matched(cohort)
    rows = balance_table(cohort.without_sets(), match)
    report_generator.emit(report_generator.balance_report(rows, set_structure_table(match)), cfg.output)


def _run_test(cfg: RunConfig) -> None:
    match = _matched(load_csv(_require_input(cfg), cfg.columns))
    tau0 = float(cfg.params.get('tau0', 0.0))
    gamma = cfg.gammas[0]
    if gamma > 1.0:
        result = gamma_pvalue_bound(match, tau0, GammaSpec(gamma=gamma), cfg.stat)
    else:
        result = test(match, tau0, cfg.stat, cfg.null)
    report_generator.emit(report_generator.test_report(result, cfg.alpha), cfg.output)


def _run_ci(cfg: RunConfig) -> None:
    data = _version_data(cfg)
    family = interval_family(data, cfg.alpha, cfg.stat, cfg.null,
                             bonferroni=bool(cfg.params.get('bonferroni')))
    report_generator.emit(report_generator.ci_report(family), cfg.output)


def _run_sensitivity(cfg: RunConfig) -> None:
    data = _version_data(cfg)
    results = [sensitivity_interval(data, cfg.alpha, GammaSpec(gamma=g), cfg.stat) for g in cfg.gammas]
    masking = None
    effect = cfg.params.get('mask_effect')
    if effect is not None:
        masking = {
            'tau': effect,
            'gamma_ic': masking_gamma(data, effect, cfg.alpha, cfg.stat, IntervalLabel.IC),
            'gamma_iv': masking_gamma(data, effect, cfg.alpha, cfg.stat, IntervalLabel.IV),
        }
    report_generator.emit(report_generator.sensitivity_report(results, masking), cfg.output)


def _run_plotdata(cfg: RunConfig) -> None:
    data = _version_data(cfg)
    bonferroni = bool(cfg.params.get('bonferroni'))
    results = [sensitivity_interval(data, cfg.alpha, GammaSpec(gamma=g), cfg.stat, bonferroni=bonferroni)
               for g in cfg.gammas]
    report_generator.emit(report_generator.plot_rows(results), cfg.output)


def _run_amplify(cfg: RunConfig) -> None:
    lambdas: List[float] = cfg.params.get('lambdas', [])
    delta = cfg.params.get('delta')
    if delta is not None:
        if len(lambdas) != 1:
            raise DomainError("amplify with --delta takes exactly one --lambda")
        gamma = amplify(AmplifyPair(**{'lambda': lambdas[0], 'delta': delta}))
        report_generator.emit(f"{gamma!r}\n", cfg.output)
        return
    gamma = cfg.params.get('curve_gamma')
    if gamma is None:
        raise DomainError("amplify needs --delta or --gamma")
    pairs = amplify_curve(gamma, lambdas)
    rows = "".join(f"{p.lambda_!r},{p.delta!r}\n" for p in pairs)
    report_generator.emit("lambda,delta\n" + rows, cfg.output)


def _run_simulate(cfg: RunConfig) -> None:
    p = cfg.params
    if p.get('grid'):
        table = power_grid(reps=p['reps'], seed=cfg.seed, alpha=cfg.alpha, null_method=cfg.null.method)
        report_generator.emit(report_generator.frame_to_csv(table), cfg.output)
        return
    try:
        design = SimDesign.from_ratio(p['tau_b'], p['ratio_a'], I=p['sets'], reps=p['reps'],
                                      seed=cfg.seed, alpha=cfg.alpha, null_method=cfg.null.method,
                                      mc_draws=max(cfg.null.draws, NUMERIC.min_mc_draws),
                                      bonferroni=p.get('bonferroni', False))
    except ValidationError as e:
        raise DomainError(f"Invalid simulation design: {e}") from e
    report_generator.emit(report_generator.simulation_csv([power_study(design)]), cfg.output)


HANDLERS = {
    Subcommand.MATCH: _run_match,
    Subcommand.BALANCE: _run_balance,
    Subcommand.TEST: _run_test,
    Subcommand.CI: _run_ci,
    Subcommand.SENSITIVITY: _run_sensitivity,
    Subcommand.AMPLIFY: _run_amplify,
    Subcommand.SIMULATE: _run_simulate,
    Subcommand.PLOTDATA: _run_plotdata,
}


def run(cfg: RunConfig) -> int:
    """Execute one subcommand and write its artifact; returns the exit status"""
    logger.info(f"Running {cfg.subcommand.value}")
    with perf_monitor.track(f"cli.{cfg.subcommand.value}"):
        HANDLERS[cfg.subcommand](cfg)
    return 0


def _state(ctx: typer.Context) -> Dict[str, Any]:
    return ctx.ensure_object(dict)


def _stat_spec(stat: StatisticKind, huber_scale: Optional[float]) -> StatisticSpec:
    if huber_scale is None:
        return StatisticSpec(kind=stat)
    return StatisticSpec(kind=stat, scale_policy="fixed", fixed_scale=huber_scale)


def _null_spec(null: NullMethod, draws: int, seed: int) -> NullSpec:
    try:
        return NullSpec(method=null, draws=draws, seed=seed)
    except ValidationError as e:
        raise DomainError(f"Invalid null specification: {e}") from e


@app.callback()
def main_callback(
    ctx: typer.Context,
    log_level: str = typer.Option("WARNING", "--log-level", envvar="VE_LOG_LEVEL", help="Log level for stderr."),
    threads: Optional[int] = typer.Option(None, "--threads", min=1, help="Worker cap (overrides VE_THREADS)."),
    id_col: str = typer.Option("id", "--id-col", help="Unit id column."),
    treated_col: str = typer.Option("treated", "--treated-col", help="Treatment indicator column (0/1)."),
    version_col: str = typer.Option("version", "--version-col", help="Version label column."),
    outcome_col: str = typer.Option("outcome", "--outcome-col", help="Outcome column."),
    set_col: str = typer.Option("set_id", "--set-col", help="Matched set column."),
    covariates: Optional[str] = typer.Option(None, "--covariates",
                                             help="Comma-separated covariates [default: every other column]."),
    version_a: str = typer.Option("A", "--version-a", help="Label of version a."),
    version_b: str = typer.Option("B", "--version-b", help="Label of version b."),
    version_arm: VersionArm = typer.Option(VersionArm.CONTROL, "--version-arm", help="Arm carrying versions."),
) -> None:
    """Global options: logging, threads and the CSV column layout"""
    if threads is not None:
        os.environ['VE_THREADS'] = str(threads)
        get_settings.cache_clear()
    settings = get_settings()
    setup_logging(log_level.upper(), settings.log_file)

    state = _state(ctx)
    try:
        state['columns'] = ColumnSpec(
            id=id_col,
            treated=treated_col,
            version=version_col,
            outcome=outcome_col,
            set_id=set_col,
            covariates=tuple(c.strip() for c in covariates.split(',') if c.strip()) if covariates else None,
            version_a=version_a,
            version_b=version_b,
            version_arm=version_arm,
        )
    except ValidationError as e:
        error_handler.report({'error': 'DomainError', 'message': str(e), 'details': {}})
        raise typer.Exit(code=DomainError.exit_code)


@app.command("match")
@error_handler.handle_cli
def match_command(
    ctx: typer.Context,
    input: Path = typer.Option(..., "--input", help="Unmatched cohort CSV."),
    ratio: str = typer.Option("6:6", "--ratio", help="max controls per treated : max treated per control."),
    caliper: Optional[float] = typer.Option(None, "--caliper", help="Forbid pairs farther apart than this."),
    out: Optional[str] = typer.Option(None, "--out", "--output", help="Matched CSV [default: stdout]."),
    report: Optional[Path] = typer.Option(None, "--report", help="Optional JSON match report."),
) -> None:
    """Optimal full match on Mahalanobis distance; writes the cohort with set ids."""
    run(_config(subcommand=Subcommand.MATCH, input=input, columns=_state(ctx)['columns'],
                output=_out_path(out),
                params={'ratio': ratio, 'caliper': caliper, 'report': str(report) if report else None}))


@app.command("balance")
@error_handler.handle_cli
def balance_command(
    ctx: typer.Context,
    input: Path = typer.Option(..., "--input", help="Matched cohort CSV."),
    out: Optional[str] = typer.Option(None, "--out", "--output", help="JSON report [default: stdout]."),
) -> None:
    """Standardized differences before and after matching, with set structure."""
    run(_config(subcommand=Subcommand.BALANCE, input=input, columns=_state(ctx)['columns'],
                output=_out_path(out)))


@app.command("test")
@error_handler.handle_cli
def test_command(
    ctx: typer.Context,
    input: Path = typer.Option(..., "--input", help="Matched cohort CSV."),
    tau0: float = typer.Option(0.0, "--tau0", help="Hypothesized constant effect."),
    stat: StatisticKind = typer.Option(StatisticKind.MEAN_DIFF, "--stat", help="Test statistic."),
    huber_scale: Optional[float] = typer.Option(None, "--huber-scale", help="Fixed Huber scale [default: MAD]."),
    null: NullMethod = typer.Option(NullMethod.NORMAL, "--null", help="Null distribution."),
    draws: int = typer.Option(NUMERIC.default_mc_draws, "--draws", help="Monte Carlo draws."),
    seed: int = typer.Option(0, "--seed", help="Monte Carlo seed."),
    alpha: float = typer.Option(NUMERIC.alpha, "--alpha", help="Level for the reject flag."),
    gamma: float = typer.Option(1.0, "--gamma", help="Sensitivity bound (>1 uses the gamma P-value bound)."),
    out: Optional[str] = typer.Option(None, "--out", "--output", help="JSON result [default: stdout]."),
) -> None:
    """Randomization test of H_tau0."""
    run(_config(subcommand=Subcommand.TEST, input=input, columns=_state(ctx)['columns'], alpha=alpha,
                gammas=[gamma], stat=_stat_spec(stat, huber_scale), null=_null_spec(null, draws, seed),
                seed=seed, output=_out_path(out), params={'tau0': tau0}))


@app.command("ci")
@error_handler.handle_cli
def ci_command(
    ctx: typer.Context,
    input_all: Path = typer.Option(..., "--input-all", help="Match with all controls."),
    input_a: Path = typer.Option(..., "--input-a", help="Match with version-a controls."),
    input_b: Path = typer.Option(..., "--input-b", help="Match with version-b controls."),
    alpha: float = typer.Option(NUMERIC.alpha, "--alpha", help="1 - coverage."),
    stat: StatisticKind = typer.Option(StatisticKind.MEAN_DIFF, "--stat", help="Test statistic."),
    huber_scale: Optional[float] = typer.Option(None, "--huber-scale", help="Fixed Huber scale [default: MAD]."),
    null: NullMethod = typer.Option(NullMethod.NORMAL, "--null", help="Null distribution."),
    draws: int = typer.Option(NUMERIC.default_mc_draws, "--draws", help="Monte Carlo draws."),
    seed: int = typer.Option(0, "--seed", help="Monte Carlo seed."),
    bonferroni: bool = typer.Option(False, "--bonferroni", help="Add the three alpha/3 intervals."),
    out: Optional[str] = typer.Option(None, "--out", "--output", help="JSON result [default: stdout]."),
) -> None:
    """Ic, Ia, Ib and the simultaneous intervals Iv and Istar."""
    run(_config(subcommand=Subcommand.CI, input_all=input_all, input_a=input_a, input_b=input_b,
                columns=_state(ctx)['columns'], alpha=alpha, stat=_stat_spec(stat, huber_scale),
                null=_null_spec(null, draws, seed), seed=seed, output=_out_path(out),
                params={'bonferroni': bonferroni}))


@app.command("sensitivity")
@error_handler.handle_cli
def sensitivity_command(
    ctx: typer.Context,
    input_all: Path = typer.Option(..., "--input-all", help="Match with all controls."),
    input_a: Path = typer.Option(..., "--input-a", help="Match with version-a controls."),
    input_b: Path = typer.Option(..., "--input-b", help="Match with version-b controls."),
    gamma: List[float] = typer.Option([1.0], "--gamma", help="Sensitivity bound; repeatable."),
    alpha: float = typer.Option(NUMERIC.alpha, "--alpha", help="1 - coverage."),
    stat: StatisticKind = typer.Option(StatisticKind.MEAN_DIFF, "--stat", help="Test statistic."),
    huber_scale: Optional[float] = typer.Option(None, "--huber-scale", help="Fixed Huber scale [default: MAD]."),
    mask_effect: Optional[float] = typer.Option(None, "--mask-effect",
                                                help="Report the smallest gamma whose Ic / Iv contain this effect."),
    out: Optional[str] = typer.Option(None, "--out", "--output", help="JSON result [default: stdout]."),
) -> None:
    """Interval families under assignment bias of at most gamma."""
    run(_config(subcommand=Subcommand.SENSITIVITY, input_all=input_all, input_a=input_a, input_b=input_b,
                columns=_state(ctx)['columns'], alpha=alpha, gammas=list(gamma),
                stat=_stat_spec(stat, huber_scale), output=_out_path(out),
                params={'mask_effect': mask_effect}))


@app.command("amplify")
@error_handler.handle_cli
def amplify_command(
    lambda_: List[float] = typer.Option(..., "--lambda", help="Treatment odds multiplier; repeatable with --gamma."),
    delta: Optional[float] = typer.Option(None, "--delta", help="Outcome odds multiplier."),
    gamma: Optional[float] = typer.Option(None, "--gamma", help="Print the (lambda, delta) curve for this gamma."),
    out: Optional[str] = typer.Option(None, "--out", "--output", help="Output file [default: stdout]."),
) -> None:
    """Gamma of an unobserved covariate with odds multipliers lambda and delta."""
    run(_config(subcommand=Subcommand.AMPLIFY, output=_out_path(out),
                params={'lambdas': list(lambda_), 'delta': delta, 'curve_gamma': gamma}))


@app.command("simulate")
@error_handler.handle_cli
def simulate_command(
    taub: float = typer.Option(0.25, "--taub", help="Effect relative to version-b controls."),
    ratio_a: float = typer.Option(1.0, "--ratio-a", help="tau_a / tau_b."),
    sets: int = typer.Option(100, "--sets", help="Matched sets per data set."),
    reps: int = typer.Option(1000, "--reps", help="Replicates."),
    seed: int = typer.Option(0, "--seed", help="Master seed."),
    alpha: float = typer.Option(NUMERIC.alpha, "--alpha", help="Test level."),
    null: NullMethod = typer.Option(NullMethod.NORMAL, "--null", help="Null distribution for Ic."),
    bonferroni: bool = typer.Option(False, "--bonferroni", help="Also report BC(all) / Ic length."),
    grid: bool = typer.Option(False, "--grid", help="Run the full tau_b x ratio grid."),
    out: Optional[str] = typer.Option(None, "--out", "--output", help="CSV [default: stdout]."),
) -> None:
    """Power of the version method and the omnibus F-test, with interval coverage."""
    if null == NullMethod.EXACT:
        raise DomainError("simulations support the normal and mc nulls")
    run(_config(subcommand=Subcommand.SIMULATE, alpha=alpha, seed=seed, output=_out_path(out),
                null=_null_spec(null, NUMERIC.min_mc_draws, seed),
                params={'tau_b': taub, 'ratio_a': ratio_a, 'sets': sets, 'reps': reps,
                        'grid': grid, 'bonferroni': bonferroni}))


@app.command("plotdata")
@error_handler.handle_cli
def plotdata_command(
    ctx: typer.Context,
    input_all: Path = typer.Option(..., "--input-all", help="Match with all controls."),
    input_a: Path = typer.Option(..., "--input-a", help="Match with version-a controls."),
    input_b: Path = typer.Option(..., "--input-b", help="Match with version-b controls."),
    gamma: List[float] = typer.Option([1.0], "--gamma", help="Sensitivity bound; repeatable."),
    alpha: float = typer.Option(NUMERIC.alpha, "--alpha", help="1 - coverage."),
    bonferroni: bool = typer.Option(False, "--bonferroni/--no-bonferroni",
                                    help="Add the alpha/3 Bonferroni rows after each family."),
    out: Optional[str] = typer.Option(None, "--out", "--output", help="CSV [default: stdout]."),
) -> None:
    """CSV rows (label, lo, hi, gamma) for interval plots."""
    run(_config(subcommand=Subcommand.PLOTDATA, input_all=input_all, input_a=input_a, input_b=input_b,
                columns=_state(ctx)['columns'], alpha=alpha, gammas=list(gamma), output=_out_path(out),
                params={'bonferroni': bonferroni}))


def main() -> None:
    app()


if __name__ == "__main__":
    main()
