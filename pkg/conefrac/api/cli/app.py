"""Command-line interface for conefrac using Typer."""

import os
from pathlib import Path
from typing import List, Optional, Tuple

import click
import typer
from rich.console import Console
from rich.table import Table

from conefrac.core.config import settings
from conefrac.core.errors import ConeFracError, error_to_dict, handle_error
from conefrac.core.logging import configure_logging, get_structlog_logger
from conefrac.domain.models import RunConfig

console = Console()
err_console = Console(stderr=True)
logger = get_structlog_logger(__name__)

app = typer.Typer(
    name="conefrac",
    help="Implicit cohesive fracture with a conic interior-point solver",
    add_completion=False,
    no_args_is_help=True,
)

_THREAD_VARIABLES = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def _limit_threads(threads: Optional[int]) -> None:
    """Cap BLAS/LAPACK threads; only effective before numpy is first imported."""
    threads = threads or settings.threads
    if threads:
        for name in _THREAD_VARIABLES:
            os.environ[name] = str(threads)


def _fail(error: Exception) -> typer.Exit:
    payload = handle_error(error)["error"]
    err_console.print(f"[red]{payload['code']}:[/red] {payload['message']}")
    if payload["details"]:
        err_console.print(payload["details"])
    exit_code = error.exit_code if isinstance(error, ConeFracError) else 1
    return typer.Exit(exit_code)


def _load(config: Path) -> RunConfig:
    run_config = RunConfig.from_toml(config)
    logger.info("Configuration loaded", path=str(config), steps=run_config.n_step, dt=run_config.dt)
    return run_config


@app.callback()
def callback(
    log_level: Optional[str] = typer.Option(None, "--log-level", help="Override CONEFRAC_LOG_LEVEL"),
) -> None:
    """conefrac CLI."""
    configure_logging(level=log_level)


@app.command()
def run(
    config: Path = typer.Argument(..., help="TOML run configuration"),
    output_dir: Optional[Path] = typer.Option(None, "--output-dir", "-o", help="Where outputs are written"),
    threads: Optional[int] = typer.Option(None, "--threads", min=1, help="BLAS/LAPACK thread cap"),
    max_steps: Optional[int] = typer.Option(None, "--max-steps", min=0, help="Stop after this many steps"),
) -> None:
    """Run a simulation and write its outputs."""
    _limit_threads(threads)
    try:
        run_config = _load(config)
        directory = output_dir or Path(run_config.output.directory or settings.output_dir)
        summary = _simulate(run_config, directory, max_steps)
    except ConeFracError as e:
        logger.error("Run failed", **error_to_dict(e)["error"])
        raise _fail(e)
    except Exception as e:
        logger.exception("Unexpected failure")
        raise _fail(e)

    table = Table("Quantity", "Value", title="conefrac run")
    for key, value in summary:
        table.add_row(key, value)
    console.print(table)


def _simulate(config: RunConfig, directory: Path, max_steps: Optional[int]) -> List[Tuple[str, str]]:
    # numpy and scipy load here so that --threads takes effect first.
    from conefrac import __version__
    from conefrac.adapters.files import OutputWriter
    from conefrac.core.errors import StepFailure
    from conefrac.core.metrics import metrics
    from conefrac.services.energy import EnergyLedger, load_deflection
    from conefrac.services.stepper import Simulation

    sim = Simulation(config)
    ledger = EnergyLedger.for_simulation(sim)
    writer = OutputWriter(directory)
    output = config.output

    monitor = None
    if output.load_nodeset is not None and output.deflection_node is not None:
        load_dofs = 2 * sim.fmesh.nodeset(output.load_nodeset) + output.load_component
        deflection_dof = 2 * sim.fmesh.node_copy(output.deflection_node) + output.deflection_component
        monitor = (load_dofs, deflection_dof)
    points = []

    status, failure = "completed", None
    last_step = 0
    try:
        for record in sim.run(max_steps):
            ledger.record(record)
            last_step = record.step
            if output.damage_every and record.step % output.damage_every == 0 and record.d.size:
                writer.write_damage(record, sim.fmesh.n_g)
            if output.snapshot_every and record.step % output.snapshot_every == 0:
                writer.write_snapshot(record, sim.fmesh)
            if monitor is not None:
                deflection, load = load_deflection(record, *monitor)
                points.append((record.step, record.time, deflection, output.thickness * load))
    except StepFailure as e:
        status, failure = "failed", e

    writer.write_energies(ledger.rows)
    if points:
        writer.write_load_deflection(points)
    report = ledger.report()
    writer.write_manifest(
        config.model_dump(mode="json"),
        {
            "version": __version__,
            "status": status,
            "steps_completed": last_step,
            "max_steps": max_steps,
            "threads": os.environ.get("OMP_NUM_THREADS"),
            "balance": {"max_relative_residual": report.max_relative, "scale_J": report.scale},
            "failure": error_to_dict(failure)["error"] if failure else None,
        },
    )
    writer.emit_plots(bool(points))
    if settings.metrics_textfile:
        metrics.write_textfile(directory / "metrics.prom")
    logger.info("Outputs written", directory=str(directory), files=len(writer.written), status=status)

    if failure is not None:
        raise failure
    return [
        ("steps", str(last_step)),
        ("dofs", str(sim.fmesh.n_dof)),
        ("interface Gauss points", str(sim.n_i)),
        ("max relative balance residual", f"{report.max_relative:.3e}"),
        ("output directory", str(directory)),
    ]


@app.command()
def check(
    config: Path = typer.Argument(..., help="TOML run configuration"),
) -> None:
    """Validate a configuration and its mesh without solving."""
    try:
        run_config = _load(config)
        from conefrac.services.stepper import Simulation

        sim = Simulation(run_config)
    except ConeFracError as e:
        logger.error("Check failed", **error_to_dict(e)["error"])
        raise _fail(e)
    except Exception as e:
        logger.exception("Unexpected failure")
        raise _fail(e)

    table = Table("Item", "Value", title=f"{config} is valid")
    table.add_row("nodes (after duplication)", str(sim.fmesh.n_nodes))
    table.add_row("elements", str(sim.fmesh.n_elements))
    table.add_row("interfaces", str(sim.fmesh.n_e))
    table.add_row("contact rows", str(sim.contact.n_li))
    table.add_row("steps", str(run_config.n_step))
    table.add_row("time step (s)", f"{run_config.dt:.6e}")
    table.add_row("mode", "quasistatic" if run_config.quasistatic else "dynamic")
    console.print(table)


@app.command()
def version() -> None:
    """Show version information."""
    from conefrac import __version__

    console.print(f"conefrac v{__version__}")


def main(argv: Optional[List[str]] = None) -> int:
    """Console entry point returning the process exit code."""
    command = typer.main.get_command(app)
    try:
        result = command.main(args=argv, prog_name="conefrac", standalone_mode=False)
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.exceptions.Abort:
        return 1
    return result if isinstance(result, int) else 0


if __name__ == "__main__":
    raise SystemExit(main())
