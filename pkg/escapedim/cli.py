"""
Command-line interface for escapedim.

Provides commands for building a construction, enumerating its poles, estimating the
dimension of the escaping set, sampling growth and running the acceptance suite.
"""

import sys
import traceback
from collections.abc import Callable
from pathlib import Path
from typing import Any, NoReturn, TypeVar

import click
import numpy as np
from rich.console import Console
from rich.panel import Panel
from rich.table import Table

from . import artifacts
from .acceptance import AcceptanceSuite
from .config import AcceptanceConfig, DimensionOptions, RunConfig, build_run_config, load_config_file
from .errors import (
    ArtifactError,
    CompletenessError,
    ConfigurationError,
    EscapeDimError,
    EvaluationRangeExceeded,
    RegionTooLarge,
)
from .escape_dimension import DimensionMethod, critical_exponent, growth_curve, theoretical_bound
from .logging_config import level_for_verbosity, setup_logging
from .speiser_constructions import DELTA_SECTOR, Construction, check_completeness, construct
from .utils import resolve_workers

console = Console()

F = TypeVar("F", bound=Callable[..., Any])

EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_COMPLETENESS = 3
EXIT_VERIFY = 4
EXIT_RANGE = 5

# RunConfig fields that describe the function rather than one invocation
_PERSISTED_FIELDS = (
    "M",
    "rho",
    "alpha",
    "lambda_",
    "N_power",
    "q",
    "c",
    "truncation_N",
    "tolerance",
    "map_accuracy",
    "theorem2",
    "halve_teeth",
)


def run_options(func: F) -> F:
    """Attach the flags shared by every command that builds a RunConfig."""
    options = [
        click.option("--M", "multiplicity", type=int, help="Pole multiplicity M"),
        click.option("--rho", type=float, help="Target order rho"),
        click.option("--radius", type=float, help="Enumeration radius"),
        click.option("--alpha", type=float, help="Comb order override"),
        click.option("--lambda", "lambda_", type=float, help="Scaling factor in (0, 1]"),
        click.option("--N-power", "n_power", type=int, help="Power-trick exponent override"),
        click.option("--q", type=int, help="Modified exponential order q"),
        click.option("--c", type=float, help="Modified exponential constant c"),
        click.option("--truncation-N", "truncation_n", type=int, help="Comb truncation N"),
        click.option("--tolerance", type=float, help="Numerical tolerance"),
        click.option("--out", type=click.Path(file_okay=False), help="Output directory"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _run_config(ctx: click.Context, **flags: Any) -> RunConfig:
    values = {
        "M": flags.pop("multiplicity", None),
        "lambda_": flags.pop("lambda_", None),
        "N_power": flags.pop("n_power", None),
        "truncation_N": flags.pop("truncation_n", None),
        **flags,
    }
    return build_run_config(file_values=ctx.obj.get("config_values"), flag_values=values)


def _persisted(run: RunConfig) -> dict[str, Any]:
    return {name: getattr(run, name) for name in _PERSISTED_FIELDS}


def _stored_construction(out: Path, workers: int) -> tuple[RunConfig, Construction]:
    payload = artifacts.load_construction(out)
    stored = payload.get("run")
    if not isinstance(stored, dict):
        raise ArtifactError("construction.json has no run parameters", path=str(out))
    run = build_run_config(file_values=stored, flag_values={"out": out, "workers": workers})
    return run, construct(run)


def _fail(ctx: click.Context, error: Exception) -> NoReturn:
    """Print the error and exit with the code for its kind."""
    if isinstance(error, (ConfigurationError, RegionTooLarge, ArtifactError)):
        code = EXIT_CONFIG
    elif isinstance(error, CompletenessError):
        code = EXIT_COMPLETENESS
    elif isinstance(error, EvaluationRangeExceeded):
        code = EXIT_RANGE
    else:
        code = EXIT_FAILURE
    if isinstance(error, EscapeDimError):
        console.print(f"[bold red]Error:[/bold red] {error}")
        if isinstance(error, ConfigurationError) and error.details.get("validation_errors"):
            for message in error.details["validation_errors"]:
                console.print(f"  - {message}")
    else:
        console.print(f"[bold red]Unexpected error:[/bold red] {error}")
        if ctx.obj.get("verbose"):
            console.print(traceback.format_exc())
    sys.exit(code)


def _metric_table(rows: list[tuple[str, str]]) -> Table:
    table = Table(show_header=True, header_style="bold magenta")
    table.add_column("Metric", style="cyan")
    table.add_column("Value", style="green")
    for name, value in rows:
        table.add_row(name, value)
    return table


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Enable verbose logging")
@click.option("--log-file", type=click.Path(dir_okay=False), help="Also log to this file")
@click.option(
    "--config",
    "config_path",
    type=click.Path(dir_okay=False),
    help="key = value config file; flags win over it",
)
@click.pass_context
def cli(ctx: click.Context, verbose: bool, log_file: str | None, config_path: str | None) -> None:
    """escapedim - dimensions of escaping sets of meromorphic functions."""
    setup_logging(
        level=level_for_verbosity(verbose),
        log_file=Path(log_file) if log_file else None,
        detailed=verbose,
    )
    ctx.ensure_object(dict)
    ctx.obj["verbose"] = verbose
    try:
        ctx.obj["config_values"] = load_config_file(Path(config_path)) if config_path else {}
    except EscapeDimError as e:
        _fail(ctx, e)


@cli.command(name="construct")
@run_options
@click.option("--theorem2", is_flag=True, default=None, help="Build the infinite-order family")
@click.option("--halve-teeth", is_flag=True, default=None, help="Halve every comb tooth")
@click.pass_context
def construct_cmd(ctx: click.Context, **flags: Any) -> None:
    """Build the function for the given M and rho and write its descriptors."""
    try:
        run = _run_config(ctx, **flags)
        construction = construct(run)
        payload = construction.to_dict()
        payload["theoretical"] = theoretical_bound(run.M, construction.rho)
        payload["run"] = _persisted(run)
        path = artifacts.save_construction(payload, run.out)

        console.print(
            Panel.fit(
                f"[bold blue]Kind:[/bold blue] {payload['kind']}\n"
                f"[bold]Function:[/bold] {payload['descriptor']}",
                title="Construction",
            )
        )
        rows = [
            ("M", str(run.M)),
            ("rho", f"{construction.rho:g}"),
            ("N", str(construction.N)),
            ("Theoretical dimension", f"{payload['theoretical']:.6f}"),
        ]
        if construction.spec is not None:
            rows.append(("Comb alpha", f"{construction.spec.alpha:g}"))
        console.print(_metric_table(rows))
        console.print(f"[bold green]Wrote[/bold green] {path}")
    except Exception as e:
        _fail(ctx, e)


@cli.command()
@click.option("--radius", type=float, help="Enumeration radius")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Artifact directory")
@click.option("--delta-only", is_flag=True, help="Keep only poles in the sector Delta")
@click.option("--check", is_flag=True, help="Compare with a grid pole search near the origin")
@click.option(
    "--max-real", type=float, default=None, help="Keep only poles with Re a <= this (H o exp only)"
)
@click.option("--workers", type=int, default=None, help="Worker threads")
@click.pass_context
def poles(
    ctx: click.Context,
    radius: float | None,
    out: str | None,
    delta_only: bool,
    check: bool,
    max_real: float | None,
    workers: int | None,
) -> None:
    """Enumerate the poles of a stored construction into atlas.json."""
    try:
        out_dir = Path(out) if out else _run_config(ctx).out
        run, construction = _stored_construction(out_dir, resolve_workers(workers))
        limit = radius if radius is not None else run.radius
        sector = DELTA_SECTOR if delta_only else None
        atlas = construction.atlas(limit, sector, run.workers, max_real=max_real)
        check_radius = limit if max_real is not None else 2.0
        handle = construction.handle_for(atlas)
        found = check_completeness(handle, atlas, check_radius) if check else None
        path = artifacts.save_atlas(atlas, out_dir)

        rows = [("Radius", f"{limit:g}"), ("Poles", str(len(atlas))), ("Multiplicity", str(atlas.M))]
        if found is not None:
            rows.append(("Grid poles matched", str(found)))
        console.print(_metric_table(rows))
        console.print(f"[bold green]Wrote[/bold green] {path}")
    except Exception as e:
        _fail(ctx, e)


@cli.command()
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Artifact directory")
@click.option("--rho", type=float, default=None, help="Order for the theoretical value")
@click.option(
    "--method",
    type=click.Choice([m.value for m in DimensionMethod]),
    default=DimensionMethod.BLOCK_DECAY_FIT.value,
    help="Estimator",
)
@click.option("--verify", is_flag=True, help="Exit 4 when the bracket misses the theoretical value")
@click.option("--slack", type=float, default=None, help="Allowed gap in verification mode")
@click.pass_context
def dimension(
    ctx: click.Context,
    out: str | None,
    rho: float | None,
    method: str,
    verify: bool,
    slack: float | None,
) -> None:
    """Estimate the critical exponent t* from atlas.json."""
    try:
        run = _run_config(ctx)
        out_dir = Path(out) if out else run.out
        atlas = artifacts.load_atlas(out_dir / artifacts.ATLAS_FILE)
        if rho is None and (out_dir / artifacts.CONSTRUCTION_FILE).exists():
            stored = artifacts.load_construction(out_dir).get("rho")
            rho = float(stored) if stored is not None else float("inf")
        estimate = critical_exponent(atlas, DimensionOptions(method=method, rho=rho))
        path = artifacts.save_dimension(estimate, out_dir)

        low, high = estimate.t_bracket
        rows = [
            ("Poles", str(len(atlas))),
            ("t*", f"{estimate.t_star:.6f}"),
            ("Bracket", f"[{low:.6f}, {high:.6f}]"),
        ]
        if estimate.theoretical is not None:
            rows.append(("Theoretical", f"{estimate.theoretical:.6f}"))
            rows.append(("Gap", f"{estimate.gap:.6f}"))
        console.print(_metric_table(rows))
        console.print(f"[bold green]Wrote[/bold green] {path}")

        if verify:
            if estimate.theoretical is None:
                raise ConfigurationError("--verify needs rho", parameter="rho")
            allowed = run.verify_slack if slack is None else slack
            if not (low - allowed <= estimate.theoretical <= high + allowed):
                console.print(
                    f"[bold red]Verification failed:[/bold red] theoretical "
                    f"{estimate.theoretical:.6f} outside [{low:.6f}, {high:.6f}] +/- {allowed:g}"
                )
                sys.exit(EXIT_VERIFY)
    except Exception as e:
        _fail(ctx, e)


@cli.command()
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Artifact directory")
@click.option("--r-min", type=float, default=16.0, help="Smallest sample radius")
@click.option("--radius", type=float, default=None, help="Largest sample radius")
@click.option("--samples", type=int, default=8, help="Number of geometric radii")
@click.option("--entire", is_flag=True, help="Sample the comb map g instead of f")
@click.pass_context
def growth(
    ctx: click.Context,
    out: str | None,
    r_min: float,
    radius: float | None,
    samples: int,
    entire: bool,
) -> None:
    """Sample T(r), n(r) and log M(r) of a stored construction."""
    try:
        out_dir = Path(out) if out else _run_config(ctx).out
        run, construction = _stored_construction(out_dir, resolve_workers(None))
        r_max = radius if radius is not None else run.radius
        if samples < 2 or r_max <= r_min:
            raise ConfigurationError("need at least 2 radii with r-min < radius", parameter="samples")
        radii = np.geomspace(r_min, r_max, samples)
        if entire:
            if construction.map_handle is None:
                raise ConfigurationError("this construction has no comb map", parameter="entire")
            curve = growth_curve(construction.map_handle, radii)
        else:
            atlas_path = out_dir / artifacts.ATLAS_FILE
            atlas = artifacts.load_atlas(atlas_path) if atlas_path.exists() else None
            if atlas is None or atlas.sector_filter is not None:
                atlas = construction.atlas(r_max, None, run.workers)
            curve = growth_curve(construction.handle, radii, atlas)
        path = artifacts.save_growth(curve, out_dir)

        table = Table(show_header=True, header_style="bold magenta")
        table.add_column("r", style="cyan")
        table.add_column("n(r)", style="green")
        table.add_column("T(r)", style="green")
        for sample in curve.samples:
            table.add_row(f"{sample.r:.4g}", str(sample.n_r), f"{sample.T_r:.6g}")
        console.print(table)
        p_fit = "n/a" if curve.p_fit is None else f"{curve.p_fit:.4f}"
        console.print(
            f"Order {curve.order_fit:.4f}, log-log density {curve.loglog_density:.4f}, p {p_fit}"
        )
        console.print(f"[bold green]Wrote[/bold green] {path}")
    except Exception as e:
        _fail(ctx, e)


@cli.command(name="verify-all")
@click.option("--quick", is_flag=True, help="Run the fast subset")
@click.option("--halve-teeth", is_flag=True, help="Run the dimension checks on the halved comb")
@click.option("--only", type=int, multiple=True, help="Run only these criterion numbers")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Report directory")
@click.option("--workers", type=int, default=None, help="Worker threads")
@click.pass_context
def verify_all(
    ctx: click.Context,
    quick: bool,
    halve_teeth: bool,
    only: tuple[int, ...],
    out: str | None,
    workers: int | None,
) -> None:
    """Run the acceptance suite and write verify_report.json."""
    try:
        run = _run_config(ctx)
        out_dir = Path(out) if out else run.out
        suite = AcceptanceSuite(
            AcceptanceConfig(truncation_N=run.truncation_N),
            quick=quick,
            halve_teeth=halve_teeth,
            workers=resolve_workers(workers),
        )
        unknown = sorted(set(only) - set(suite.criteria))
        if unknown:
            raise ConfigurationError("unknown criterion", parameter="only", value=unknown)
        report = suite.run(list(only) if only else None)
        artifacts.write_json(out_dir / artifacts.REPORT_FILE, report.to_dict())

        table = Table(show_header=True, header_style="bold magenta")
        table.add_column("#", style="cyan")
        table.add_column("Criterion", style="cyan")
        table.add_column("Result")
        table.add_column("Seconds", style="green")
        for result in report.results:
            status = "[green]PASS[/green]" if result.passed else "[red]FAIL[/red]"
            table.add_row(str(result.number), result.name, status, f"{result.seconds:.1f}")
        console.print(table)

        if not report.passed:
            for result in report.failures:
                console.print(f"[bold red]{result.number} {result.name}:[/bold red] {result.message}")
            sys.exit(EXIT_FAILURE)
        console.print("[bold green]All criteria passed[/bold green]")
    except Exception as e:
        _fail(ctx, e)


def main() -> None:
    """Main entry point for CLI."""
    cli(obj={})


if __name__ == "__main__":
    main()
