import logging
import time
from pathlib import Path
from typing import Optional, Union

from ember.sim._report import RunReport, compute_report, write_report
from ember.sim._scenario import Scenario
from ember.sim._world import World

logger = logging.getLogger(__name__)


def run(scenario: Scenario, out_dir: Union[str, Path], ticks: Optional[int] = None) -> RunReport:
    """Simulate ``scenario``, write every log to ``out_dir`` and return the run report.

    Parameters
    ----------
    scenario: Scenario
        Validated scenario.
    out_dir: Union[str, Path]
        Log directory; created when missing. Existing log files are overwritten.
    ticks: Optional[int]
        Stop after this many ticks instead of the scenario duration.
    """
    started = time.perf_counter()
    world = World.create(scenario)
    n = world.run(ticks)
    out = world.write(out_dir)
    report = compute_report(out)
    report.wall_clock_s = round(time.perf_counter() - started, 3)
    write_report(report, out)
    logger.info(
        "%s: %d ticks, %d/%d fires extinguished in %.1f s",
        scenario.sim.name,
        n,
        report.fires_extinguished,
        len(report.fires),
        report.wall_clock_s,
    )
    return report
