"""Command line interface.

Exit codes: 0 on success (and, for ``verify``, when every case passes), 1 on
configuration errors and unknown names, 2 on numerical or evaluation failures
and failing suites.
"""

from __future__ import annotations

import functools
import logging
import sys
import typing as t

import click
import pendulum

from amv_lab.config import CloudConfig, ExperimentConfig, build_field, worker_count
from amv_lab.estimator import amv_limit
from amv_lab.exceptions import AmvLabError, ConfigError
from amv_lab.heisenberg import generate_constants, write_constants
from amv_lab.operators import (
    build_amv_operator,
    export_triplets,
    green_check,
    resolve_radius_ties,
    solve_poisson,
)
from amv_lab.reports import render_eval, render_green, render_solution, render_suite, write_report
from amv_lab.suites import SUITES, SuiteSettings, run_suite

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERIC = 2

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


def _emit(text: str, path: str | None) -> None:
    if path is None:
        click.echo(text, nl=False)
    else:
        write_report(text, path)


def exit_codes(func: t.Callable[..., int]) -> t.Callable[..., None]:
    """Map a command's return value and amv-lab errors to process exit codes."""

    @functools.wraps(func)
    def wrapper(*args: t.Any, **kwargs: t.Any) -> None:
        ctx = click.get_current_context()
        try:
            code = func(*args, **kwargs)
        except ConfigError as e:
            where = f" ({e.field})" if e.field else ""
            click.echo(f"Configuration error{where}: {e}", err=True)
            ctx.exit(EXIT_CONFIG)
        except AmvLabError as e:
            logger.exception("%s failed", ctx.command.name)
            click.echo(f"{type(e).__name__}: {e}", err=True)
            ctx.exit(EXIT_NUMERIC)
        ctx.exit(code)

    return wrapper


output_options = [
    click.option("--seed", type=int, default=None, help="Override the configured seed."),
    click.option("--out", type=click.Path(dir_okay=False), default=None, help="Report file (default: stdout)."),
    click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default=None, help="Report format."),
    click.option("--timings", is_flag=True, help="Include wall-clock fields in JSON reports."),
]


def with_output_options(func: t.Callable[..., t.Any]) -> t.Callable[..., t.Any]:
    """Attach the shared output options."""
    for option in reversed(output_options):
        func = option(func)
    return func


@click.group()
@click.option(
    "--log-level",
    type=click.Choice(LOG_LEVELS, case_sensitive=False),
    default="WARNING",
    show_default=True,
    help="Root logging level.",
)
def cli(log_level: str) -> None:
    """Asymptotic mean value Laplacians on metric measure spaces."""
    logging.basicConfig(
        level=getattr(logging, log_level.upper()),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


@cli.command("eval")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), required=True, help="Experiment config.")
@with_output_options
@exit_codes
def eval_command(config_path: str, seed: int | None, out: str | None, fmt: str | None, timings: bool) -> int:
    """Evaluate the AMV Laplacian along a radius schedule at each configured point."""
    started = pendulum.now("UTC")
    config = ExperimentConfig.from_file(config_path).override(seed=seed, out=out, format=fmt)
    space, field, points, schedule, budget, settings = config.build()
    workers = worker_count()
    results = [amv_limit(space, field, p, schedule, budget, settings=settings, workers=workers) for p in points]
    context: dict[str, t.Any] = {
        "space": space.descriptor,
        "field": config.field,
        "schedule": {"r0": schedule.r0, "ratio": schedule.ratio, "count": schedule.count},
        "seed": config.seed,
    }
    if timings:
        context["duration"] = (pendulum.now("UTC") - started).total_seconds()
    _emit(render_eval(points, results, context, config.output["format"]), config.output.get("path"))
    return EXIT_OK


@cli.command("verify")
@click.option("--suite", "suite_name", required=True, help=f"One of: {', '.join(SUITES)}.")
@click.option("--full", is_flag=True, help="Acceptance-size workloads.")
@click.option("--samples", type=click.IntRange(min=2), default=None, help="Monte Carlo draws per Heisenberg ball.")
@click.option("--constants", "constants_path", type=click.Path(dir_okay=False), default=None,
              help="Heisenberg constants file.")
@with_output_options
@exit_codes
def verify_command(
    suite_name: str,
    full: bool,
    samples: int | None,
    constants_path: str | None,
    seed: int | None,
    out: str | None,
    fmt: str | None,
    timings: bool,
) -> int:
    """Run a verification suite; exits 0 only when every case passes."""
    settings = SuiteSettings(
        seed=seed or 0,
        full=full,
        samples=samples,
        constants_path=constants_path,
        workers=worker_count(),
    )
    report = run_suite(suite_name, settings)
    _emit(render_suite(report, fmt or "json", timings=timings), out)
    if not report.passed:
        failed = [c.case_id for c in report.cases if not c.passed]
        click.echo(f"Suite {suite_name}: {len(failed)} case(s) failed: {', '.join(failed)}", err=True)
        return EXIT_NUMERIC
    return EXIT_OK


@cli.command("green")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), required=True, help="Cloud config.")
@click.option("--export-operator", type=click.Path(dir_okay=False), default=None,
              help="Also write Δ_r as sparse triplets.")
@with_output_options
@exit_codes
def green_command(
    config_path: str,
    export_operator: str | None,
    seed: int | None,
    out: str | None,
    fmt: str | None,
    timings: bool,  # noqa: ARG001
) -> int:
    """Check the discrete Green identity for the configured fields."""
    config = CloudConfig.from_file(config_path).override(seed=seed, out=out, format=fmt)
    space, cloud = config.build_cloud()
    r = resolve_radius_ties(cloud, config.r)
    op = build_amv_operator(cloud, r)
    u = cloud.evaluate(build_field(config.u, space, "u"))
    v = cloud.evaluate(build_field(config.v, space, "v"))
    report = green_check(op, u, v)
    if export_operator is not None:
        export_triplets(op, export_operator)
    context = {"space": space.descriptor, "r": r, "atoms": len(cloud), "u": config.u, "v": config.v}
    _emit(render_green(report, context, config.output["format"]), config.output.get("path"))
    return EXIT_OK if report.passed else EXIT_NUMERIC


@cli.command("poisson")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), required=True, help="Cloud config.")
@with_output_options
@exit_codes
def poisson_command(
    config_path: str,
    seed: int | None,
    out: str | None,
    fmt: str | None,
    timings: bool,  # noqa: ARG001
) -> int:
    """Solve Δ_r u = f inside the region with u = g near its faces."""
    config = CloudConfig.from_file(config_path).override(seed=seed, out=out, format=fmt)
    space, cloud = config.build_cloud()
    r = resolve_radius_ties(cloud, config.r)
    op = build_amv_operator(cloud, r)
    boundary = config.boundary(cloud, r)
    f = cloud.evaluate(build_field(config.f, space, "f"))
    g = cloud.evaluate(build_field(config.g, space, "g"))[boundary]
    u = solve_poisson(op, f, boundary, g)
    context = {"space": space.descriptor, "r": r, "boundary_atoms": len(boundary), "f": config.f, "g": config.g}
    _emit(render_solution(cloud, u, context, config.output["format"]), config.output.get("path"))
    return EXIT_OK


@cli.command("constants")
@click.option("--samples", type=click.IntRange(min=2), default=1_000_000, show_default=True,
              help="Bounding-box draws.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Constants file (default: $AMV_CONSTANTS_PATH or ./heisenberg_constants.json).")
@exit_codes
def constants_command(samples: int, seed: int, out: str | None) -> int:
    """Generate the Heisenberg Kohn-Laplacian constant file."""
    constants = generate_constants(samples, seed)
    try:
        path = write_constants(constants, out)
    except OSError as e:
        msg = f"Cannot write constants file: {e.strerror}"
        raise ConfigError(msg, field="out") from e
    click.echo(f"c = {constants['c_estimate']:.8f} ± {constants['std_error']:.2g} -> {path}")
    return EXIT_OK


if __name__ == "__main__":
    cli()
