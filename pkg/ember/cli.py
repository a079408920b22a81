"""``ember`` command line."""

import logging
import sys
from pathlib import Path
from typing import Annotated, Literal, Optional

from attrs import evolve
from cyclopts import App, Group, Parameter
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from ember import __version__
from ember.exceptions import EmberError, ScenarioError, format_ember_error
from ember.planner import Algorithm, Mode, PlanRequest, benchmark, export_path_csv, plan, write_benchmark
from ember.sim import (
    BuildingParams,
    MapParams,
    RunReport,
    compute_report,
    generate_building,
    generate_random_map,
    load_scenario,
    run as run_scenario,
    write_report,
)
from ember.utils import parse_vector
from ember.world_model import load_map, save_map

LogLevel = Literal["DEBUG", "INFO", "WARNING", "ERROR"]

MAP_SUFFIX = ".embrmap"

console = Console()
app = App(
    name="ember",
    help="Multi-robot firefighting autonomy toolkit.",
    version=__version__,
    console=console,
)
app.meta.group_parameters = Group("Session Parameters", sort_key=0)

Vector = Annotated[str, Parameter(allow_leading_hyphen=True)]


def configure_logging(level: str) -> None:
    """Route the ``ember`` loggers through one rich handler."""
    logger = logging.getLogger("ember")
    for handler in list(logger.handlers):
        if isinstance(handler, RichHandler):
            logger.removeHandler(handler)
    logger.addHandler(RichHandler(console=console, show_path=False))
    logger.setLevel(level)


def _vector(text: str, name: str):
    try:
        return parse_vector(text)
    except ValueError as e:
        raise ScenarioError(msg=f"--{name}: {e}") from None


def _print_report(report: RunReport) -> None:
    robots = Table(title=f"{report.name} (seed {report.seed}, {report.ticks} ticks)")
    for column in ("robot", "platform", "status", "rmse [m]", "rmse final [m]", "yaw rmse [deg]", "travelled [m]"):
        robots.add_column(column)
    for r in report.robots:
        robots.add_row(
            r.robot,
            r.platform,
            r.mission_status or "-",
            f"{r.position_rmse:.3f}",
            f"{r.position_rmse_final:.3f}",
            f"{r.yaw_rmse_deg:.2f}",
            f"{r.distance_travelled:.1f}",
        )
    console.print(robots)

    fires = Table(title="Fires")
    for column in ("fire", "kind", "extinguished [s]", "by", "estimate error [m]"):
        fires.add_column(column)
    for f in report.fires:
        fires.add_row(
            f.fire,
            f.kind,
            "-" if f.extinguished_time is None else f"{f.extinguished_time:.1f}",
            f.extinguished_by or "-",
            "-" if f.estimate_error is None else f"{f.estimate_error:.2f}",
        )
    console.print(fires)
    console.print(
        f"{report.fires_extinguished}/{len(report.fires)} fires extinguished, "
        f"{report.coordination_violations} coordination violations, "
        f"{report.separation_warnings} separation warnings"
    )


@app.command
def run(
    scenario: str,
    *,
    seed: Optional[int] = None,
    out: Path = Path("ember-run"),
    ticks: Optional[int] = None,
):
    """Simulate a scenario and write its logs and report.

    Parameters
    ----------
    scenario: str
        Scenario file, or the name of a bundled scenario such as ``canonical_mission``.
    seed: Optional[int]
        Master seed; overrides ``sim.seed``.
    out: Path
        Log directory.
    ticks: Optional[int]
        Stop after this many ticks.
    """
    loaded = load_scenario(scenario, validate=False)
    if seed is not None:
        if seed < 0:
            raise ScenarioError(msg=f"--seed must be non-negative; got {seed}.")
        loaded = evolve(loaded, sim=evolve(loaded.sim, seed=seed))
    loaded.validate()
    report = run_scenario(loaded, out, ticks=ticks)
    _print_report(report)
    console.print(f"Logs written to {out}")


def plan_path(
    *,
    map: Path,
    start: Vector,
    goal: Vector,
    algo: Algorithm = Algorithm.LAZY_THETA,
    inflation: float = 0.0,
    mode: Mode = Mode.THREE_D,
    coarsen: int = 1,
    out: Optional[Path] = None,
):
    """Plan one path on a map file.

    Parameters
    ----------
    map: Path
        ``EMBRMAP1`` map file.
    start: str
        Start position as ``x,y,z``.
    goal: str
        Goal position as ``x,y,z``.
    algo: Algorithm
        Search algorithm.
    inflation: float
        Obstacle inflation radius in meters.
    mode: Mode
        ``two-d`` searches the layer containing the start height.
    coarsen: int
        Block-maximum downsampling factor applied before the search.
    out: Optional[Path]
        Write the waypoints as CSV.
    """
    req = PlanRequest(
        start=_vector(start, "start"),
        goal=_vector(goal, "goal"),
        map=load_map(map),
        inflation_radius=inflation,
        mode=mode,
        coarsen=coarsen,
    )
    path = plan(req, algo)
    table = Table(title=f"{path.algorithm.value}: {path.total_length:.3f} m")
    for column in ("index", "x", "y", "z"):
        table.add_column(column, justify="right")
    for i, (x, y, z) in enumerate(path.waypoints):
        table.add_row(str(i), f"{x:.3f}", f"{y:.3f}", f"{z:.3f}")
    console.print(table)
    console.print(f"{path.expansions} expansions, {path.los_checks_performed} line-of-sight checks")
    if out is not None:
        export_path_csv(path, out)


app.command(plan_path, name="plan")


@app.command(name="bench-planner")
def bench_planner(
    *,
    maps: Path,
    out: Path,
    instances: int = 10,
    seed: int = 0,
    inflation: float = 0.0,
):
    """Compare A*, Theta* and Lazy Theta* on random start/goal pairs.

    Parameters
    ----------
    maps: Path
        Directory of ``*.embrmap`` files (or a single map file).
    out: Path
        JSON report.
    instances: int
        Start/goal pairs per map.
    seed: int
        Seed of the pair sampling.
    inflation: float
        Obstacle inflation radius in meters.
    """
    files = [maps] if maps.is_file() else sorted(maps.glob(f"*{MAP_SUFFIX}"))
    if not files:
        raise ScenarioError(msg=f"No {MAP_SUFFIX} files in {maps}.")
    records = benchmark([load_map(f) for f in files], instances, seed=seed, inflation_radius=inflation)
    write_benchmark(records, out)

    table = Table(title=f"{len(files)} map(s), {instances} instance(s) each")
    for column in ("algorithm", "solved", "mean length [m]", "mean expansions", "mean LOS checks"):
        table.add_column(column)
    for algorithm in Algorithm:
        solved = [r for r in records if r["algorithm"] == algorithm.value and r["length"] is not None]
        if not solved:
            table.add_row(algorithm.value, "0", "-", "-", "-")
            continue
        n = len(solved)
        table.add_row(
            algorithm.value,
            str(n),
            f"{sum(r['length'] for r in solved) / n:.3f}",
            f"{sum(r['expansions'] for r in solved) / n:.1f}",
            f"{sum(r['los_checks'] for r in solved) / n:.1f}",
        )
    console.print(table)


@app.command
def report(logs: Path):
    """Recompute the run report from a log directory.

    Parameters
    ----------
    logs: Path
        Directory written by ``ember run``.
    """
    result = compute_report(logs)
    write_report(result, logs)
    _print_report(result)


@app.command(name="make-map")
def make_map(
    out: Path,
    *,
    scenario: Optional[str] = None,
    density: Optional[float] = None,
    dims: Vector = "40,40,1",
    resolution: float = 0.25,
    seed: int = 0,
):
    """Write a map file.

    Without options the default single-floor building is written.

    Parameters
    ----------
    out: Path
        Destination ``EMBRMAP1`` file.
    scenario: Optional[str]
        Write the known map of this scenario.
    density: Optional[float]
        Write a uniformly random map with this occupied fraction instead.
    dims: str
        Voxel counts ``nx,ny,nz`` of a random map.
    resolution: float
        Voxel edge length in meters.
    seed: int
        Seed of random windows or random occupancy.
    """
    if scenario is not None:
        grid = load_scenario(scenario).known_map()
    elif density is not None:
        grid = generate_random_map([int(v) for v in _vector(dims, "dims")], density, resolution, seed)
    else:
        grid = generate_building(BuildingParams(), seed, MapParams(resolution=resolution))
    save_map(grid, out)
    nx, ny, nz = grid.dims
    console.print(f"Wrote {nx}x{ny}x{nz} map ({grid.n_occupied} occupied voxels) to {out}")


@app.meta.default
def launcher(
    *tokens: Annotated[str, Parameter(show=False, allow_leading_hyphen=True)],
    log_level: LogLevel = "WARNING",
):
    """Session options shared by every command.

    Parameters
    ----------
    log_level: LogLevel
        Verbosity of the ``ember`` loggers.
    """
    configure_logging(log_level)
    try:
        return app(tokens)
    except (EmberError, ValueError) as e:
        console.print(format_ember_error(e))
        sys.exit(1)


def main():
    app.meta()
