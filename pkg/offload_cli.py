#!/usr/bin/env python3
"""
Vehicular Offload CLI

Energy-minimal task offloading for vehicles driving past a row of roadside
units: solve single instances and run the deadline, task-size and fleet-size
sweeps.

Usage:
    python offload_cli.py [--config PATH] [--verbose] COMMAND [OPTIONS]

Commands:
    show-config   Show the resolved scenario, task, solver and sweep settings
    solve         Solve one instance with every scheme and compare them
    run           Run a sweep and write the results CSV
"""

import logging
import sys
from typing import Callable, List, Optional, TypeVar

import typer
from pydantic import ValidationError
from rich.console import Console
from rich.logging import RichHandler
from rich.progress import BarColumn, MofNCompleteColumn, Progress, SpinnerColumn, TextColumn
from rich.table import Table

from vec_offload import __version__
from vec_offload.config import experiment_from_config, load_config
from vec_offload.errors import ExperimentError, OffloadError
from vec_offload.harness import build_tasks, emit_csv, point_config, run_experiment, run_scheme, summarize
from vec_offload.models import ExperimentSpec
from vec_offload.scenario import generate_channel_trace

# Initialize Typer app and Rich console
app = typer.Typer(help="Energy-minimal task offloading for vehicles passing roadside units")
console = Console()

# Global configuration path - overridden by --config
CONFIG_FILE = "config.json"

ItemT = TypeVar("ItemT")


def _split(text: Optional[str], convert: Callable[[str], ItemT], name: str) -> Optional[List[ItemT]]:
    if text is None:
        return None
    try:
        return [convert(part.strip()) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise ExperimentError(f"{name}: {e}") from e


def load_spec(**overrides) -> ExperimentSpec:
    """Experiment spec from CONFIG_FILE with command line overrides"""
    return experiment_from_config(load_config(CONFIG_FILE), overrides)


@app.command()
def show_config():
    """Show the resolved configuration"""
    console.print(f"⚙️  [bold blue]Offload Configuration[/bold blue] ({CONFIG_FILE})")

    try:
        spec = load_spec()
    except (OffloadError, ValidationError) as e:
        console.print(f"❌ [red]Failed to load configuration: {e}[/red]")
        raise typer.Exit(1)

    cfg = spec.scenario
    console.print(f"\n🛣️  [cyan]Road:[/cyan]")
    console.print(f"   RSUs: [green]{cfg.num_rsus} every {cfg.rsu_spacing:g} m, radius {cfg.rsu_radius:g} m, "
                  f"height {cfg.rsu_height:g} m[/green]")
    console.print(f"   Lanes: [green]{cfg.num_lanes} x {cfg.lane_width:g} m at "
                  f"{', '.join(f'{v:g}' for v in cfg.lane_speeds)} m/s[/green]")

    console.print(f"\n📡 [cyan]Radio:[/cyan]")
    console.print(f"   Frames: [green]{cfg.num_frames} of {cfg.frame_duration * 1e3:g} ms "
                  f"(T = {cfg.mission_time:g} s)[/green]")
    console.print(f"   Bandwidth: [green]{cfg.bandwidth / 1e6:g} MHz[/green], noise [green]{cfg.noise_psd:.4g} W/Hz[/green]")
    console.print(f"   Power: [green]vehicle {cfg.vehicle_max_power:g} W, RSU {cfg.rsu_power:g} W[/green]")
    console.print(f"   Path loss: [green]h0 = {cfg.ref_gain:g}, alpha = {cfg.pathloss_exponent:g}, "
                  f"fading {'on' if cfg.fading else 'off'}[/green]")

    tasks = spec.tasks
    console.print(f"\n🚗 [cyan]Tasks:[/cyan]")
    console.print(f"   Vehicles: [green]{tasks.num_vehicles}[/green], arrivals within [green]{tasks.arrival_window:g} s[/green]")
    console.print(f"   Input: [green]{tasks.input_bits:.4g} bits, {tasks.cycles_per_bit:g} cycles/bit, "
                  f"output ratio {tasks.output_ratio:g}[/green]")

    solver = spec.solver
    console.print(f"\n🧮 [cyan]Solver:[/cyan]")
    console.print(f"   Iterations: [green]{solver.min_iterations}..{solver.max_iterations}, "
                  f"window {solver.convergence_window}, tolerance {solver.dual_tolerance:g}[/green]")
    console.print(f"   Steps: [green]{', '.join(f'{p:g}' for p in solver.step_sizes)} ({solver.step_decay})[/green]")

    console.print(f"\n📊 [cyan]Sweep:[/cyan]")
    console.print(f"   Axis: [green]{spec.axis}[/green] over [green]{', '.join(f'{v:g}' for v in spec.values)}[/green]")
    console.print(f"   Schemes: [green]{', '.join(spec.schemes)}[/green]")
    console.print(f"   Seeds: [green]{', '.join(str(s) for s in spec.seed_list())}[/green]")


@app.command()
def solve(
    value: Optional[float] = typer.Option(None, "--value", help="Axis value of the instance (default: base settings)"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Seed of arrivals and fading (default: base seed)"),
    sweep: Optional[str] = typer.Option(None, "--sweep", help="Axis that --value applies to: T, L or K"),
    schemes: Optional[str] = typer.Option(None, "--schemes", help="Comma-separated schemes to run"),
):
    """Solve one instance with every scheme and compare them"""
    try:
        spec = load_spec(axis=sweep, schemes=_split(schemes, str, "--schemes"))
        seed = spec.base_seed if seed is None else seed
        cfg, template = point_config(spec, value, seed)
        tasks = build_tasks(template, cfg, seed)
        trace = generate_channel_trace(cfg, tasks)
    except (OffloadError, ValidationError) as e:
        console.print(f"❌ [red]Failed to build the instance: {e}[/red]")
        raise typer.Exit(1)

    console.print(f"🚗 [bold blue]Solving {len(tasks)} vehicle(s) over {cfg.num_frames} frames[/bold blue] (seed {seed})")

    table = Table(title="Total Energy by Scheme")
    table.add_column("Scheme", style="cyan")
    table.add_column("Total (J)", style="green", justify="right")
    table.add_column("Per vehicle (J)", style="yellow")
    table.add_column("Iterations", style="magenta", justify="right")
    table.add_column("Gap (J)", style="blue", justify="right")
    table.add_column("Feasible", style="white")

    for scheme in spec.schemes:
        try:
            with console.status(f"Running {scheme}..."):
                outcome = run_scheme(scheme, cfg, tasks, trace, spec.solver)
        except OffloadError as e:
            console.print(f"❌ [red]{scheme} failed: {e}[/red]")
            raise typer.Exit(1)
        except Exception as e:
            console.print(f"❌ [red]{scheme} failed unexpectedly: {type(e).__name__}: {e}[/red]")
            raise typer.Exit(1)

        table.add_row(
            scheme,
            f"{outcome.total:.6g}",
            ", ".join(f"{e:.4g}" for e in outcome.per_vehicle),
            str(outcome.iterations) if outcome.report else "-",
            f"{outcome.gap:.4g}" if outcome.report else "-",
            "✅" if outcome.feasible else "⚠️  over cap",
        )
        if outcome.report:
            report = outcome.report
            console.print(
                f"📈 [cyan]one-by-one: dual bound {report.dual_bound:.6g} J, "
                f"rho = {', '.join(f'{r:.3f}' for r in report.plan.rho)}, "
                f"{report.candidates_evaluated} schedule(s) tried[/cyan]"
            )

    console.print(table)


@app.command()
def run(
    sweep: Optional[str] = typer.Option(None, "--sweep", help="Sweep axis: T (deadline), L (input bits) or K (vehicles)"),
    values: Optional[str] = typer.Option(None, "--values", help="Comma-separated axis values"),
    schemes: Optional[str] = typer.Option(None, "--schemes", help="Comma-separated schemes to run"),
    seeds: Optional[int] = typer.Option(None, "--seeds", help="Number of Monte Carlo seeds"),
    base_seed: Optional[int] = typer.Option(None, "--base-seed", help="First seed"),
    out: str = typer.Option("results.csv", "--out", "-o", help="Output CSV path"),
    workers: Optional[int] = typer.Option(None, "--workers", help="Sweep points evaluated in parallel"),
    no_timing: bool = typer.Option(False, "--no-timing", help="Write 0 wall time so the CSV is reproducible"),
):
    """Run a sweep and write the results CSV"""
    try:
        spec = load_spec(
            axis=sweep,
            values=_split(values, float, "--values"),
            schemes=_split(schemes, str, "--schemes"),
            num_seeds=seeds,
            base_seed=base_seed,
            workers=workers,
            record_timing=False if no_timing else None,
        )
    except (OffloadError, ValidationError) as e:
        console.print(f"❌ [red]Invalid sweep: {e}[/red]")
        raise typer.Exit(1)

    points = len(spec.values) * spec.num_seeds
    console.print(f"📊 [bold blue]Sweeping {spec.axis}[/bold blue] over {len(spec.values)} value(s) "
                  f"x {spec.num_seeds} seed(s), schemes: {', '.join(spec.schemes)}")

    try:
        with Progress(
            SpinnerColumn(),
            TextColumn("[progress.description]{task.description}"),
            BarColumn(),
            MofNCompleteColumn(),
            console=console,
        ) as progress:
            task = progress.add_task("Solving sweep points...", total=points)
            rows = run_experiment(spec, on_point=lambda value, seed: progress.advance(task))
        emit_csv(rows, out)
    except OffloadError as e:
        console.print(f"❌ [red]Sweep failed: {e}[/red]")
        raise typer.Exit(1)
    except Exception as e:
        console.print(f"❌ [red]Sweep failed unexpectedly: {type(e).__name__}: {e}[/red]")
        raise typer.Exit(1)

    means = summarize(rows)
    table = Table(title=f"Mean Total Energy (J) vs {spec.axis}")
    table.add_column(spec.axis, style="cyan", justify="right")
    for scheme in spec.schemes:
        table.add_column(scheme, style="green", justify="right")
    for value in spec.values:
        table.add_row(f"{value:g}", *(f"{means[(scheme, value)]:.6g}" for scheme in spec.schemes))
    console.print(table)

    infeasible = sum(1 for row in rows if not row.feasible)
    if infeasible:
        console.print(f"⚠️  [yellow]{infeasible} equal-bit row(s) exceed a frame cap[/yellow]")
    console.print(f"✅ [green]Wrote {len(rows)} rows to {out}[/green]")


def _version_callback(show: bool):
    if show:
        console.print(f"offload_cli {__version__}")
        raise typer.Exit()


@app.callback()
def main(
    config_file: Optional[str] = typer.Option(None, "--config", help="Configuration file path"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Debug logging"),
    version: bool = typer.Option(False, "--version", callback=_version_callback, is_eager=True, help="Show version"),
):
    """
    Vehicular Offload CLI

    Configuration is loaded from config.json by default; command line options
    override the file.
    """
    global CONFIG_FILE

    # Update config file path if provided
    if config_file:
        CONFIG_FILE = config_file

    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        handlers=[RichHandler(console=console, show_path=False)],
        force=True,
    )


if __name__ == "__main__":
    try:
        app()
    except KeyboardInterrupt:
        console.print("\n🛑 [yellow]Operation cancelled by user[/yellow]")
    except Exception as e:
        console.print(f"\n💥 [bold red]Unexpected error: {e}[/bold red]")
        sys.exit(1)
