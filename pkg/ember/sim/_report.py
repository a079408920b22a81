"""Run summary recomputed from the persisted logs of one run."""

import json
import math
from collections import defaultdict
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from attrs import asdict, define, field

from ember.coordination import RobotInfo, count_violations, read_events
from ember.sim._logs import (
    COORDINATION_FILE,
    EVENTS_FILE,
    FIRES_FILE,
    MANIFEST_FILE,
    PATHS_FILE,
    REPORT_FILE,
    TRUTH_FILE,
    mcl_file,
    read_csv,
)
from ember.utils import wrap_angle


@define
class RobotReport:
    robot: str
    platform: str
    position_rmse: float = 0.0
    """Over every filter update cycle, meters."""

    position_rmse_final: float = 0.0
    """Over the cycles of the final half of the run."""

    yaw_rmse_deg: float = 0.0
    yaw_rmse_final_deg: float = 0.0
    update_cycles: int = 0
    distance_travelled: float = 0.0
    planned_length: float = 0.0
    """Summed length of every plan the robot made."""

    plans: int = 0
    collisions: int = 0
    mission_status: Optional[str] = None


@define
class FireOutcome:
    fire: str
    kind: str
    extinguished_tick: Optional[int]
    extinguished_by: Optional[str]
    extinguished_time: Optional[float] = None
    estimate: Optional[str] = None
    """Id of the closest fire belief."""

    estimate_error: Optional[float] = None


@define
class RunReport:
    name: str
    seed: int
    ticks: int
    robots: List[RobotReport] = field(factory=list)
    fires: List[FireOutcome] = field(factory=list)
    fires_extinguished: int = 0
    coordination_violations: int = 0
    separation_warnings: int = 0
    wall_clock_s: Optional[float] = None
    """Filled in by a live run only; absent when recomputed from logs."""

    @property
    def all_fires_extinguished(self) -> bool:
        return self.fires_extinguished == len(self.fires)

    def to_dict(self) -> dict:
        return asdict(self)


def _rmse(errors: List[float]) -> float:
    if not errors:
        return 0.0
    return float(math.sqrt(np.mean(np.square(errors))))


def _robot_report(log_dir: Path, robot: str, platform: str, ticks: int, truth, events, paths) -> RobotReport:
    report = RobotReport(robot, platform)
    poses: Dict[int, Tuple[np.ndarray, float]] = truth.get(robot, {})

    trace_file = log_dir / mcl_file(robot)
    pos_err: List[Tuple[int, float]] = []
    yaw_err: List[Tuple[int, float]] = []
    if trace_file.exists():
        for row in read_csv(trace_file):
            tick = int(row["tick"])
            if tick not in poses:
                continue
            position, yaw = poses[tick]
            est = np.array([float(row["est_x"]), float(row["est_y"]), float(row["est_z"])])
            pos_err.append((tick, float(np.linalg.norm(est - position))))
            yaw_err.append((tick, math.degrees(abs(wrap_angle(float(row["est_yaw"]) - yaw)))))
    half = ticks / 2
    report.update_cycles = len(pos_err)
    report.position_rmse = _rmse([e for _, e in pos_err])
    report.position_rmse_final = _rmse([e for t, e in pos_err if t >= half])
    report.yaw_rmse_deg = _rmse([e for _, e in yaw_err])
    report.yaw_rmse_final_deg = _rmse([e for t, e in yaw_err if t >= half])

    ordered = [poses[t][0] for t in sorted(poses)]
    if len(ordered) > 1:
        report.distance_travelled = float(np.sum(np.linalg.norm(np.diff(ordered, axis=0), axis=1)))

    plans = paths.get(robot, {})
    report.plans = len(plans)
    for waypoints in plans.values():
        if len(waypoints) > 1:
            report.planned_length += float(np.sum(np.linalg.norm(np.diff(waypoints, axis=0), axis=1)))

    for e in events:
        if e["robot"] != robot:
            continue
        if e["event"] == "collision":
            report.collisions += 1
        elif e["event"] == "mission":
            report.mission_status = e["detail"]
    return report


def compute_report(log_dir: Union[str, Path]) -> RunReport:
    """Rebuild the :class:`RunReport` of a finished run from its log directory."""
    log_dir = Path(log_dir)
    manifest = json.loads((log_dir / MANIFEST_FILE).read_text())
    tick_rate = float(manifest["tick_rate"])
    ticks = int(manifest["ticks"])

    truth: Dict[str, Dict[int, Tuple[np.ndarray, float]]] = defaultdict(dict)
    for row in read_csv(log_dir / TRUTH_FILE):
        position = np.array([float(row["x"]), float(row["y"]), float(row["z"])])
        truth[row["robot"]][int(row["tick"])] = (position, float(row["yaw"]))

    paths: Dict[str, Dict[int, List[np.ndarray]]] = defaultdict(lambda: defaultdict(list))
    for row in read_csv(log_dir / PATHS_FILE):
        paths[row["robot"]][int(row["plan"])].append(np.array([float(row["x"]), float(row["y"]), float(row["z"])]))

    events = read_csv(log_dir / EVENTS_FILE)

    report = RunReport(manifest["name"], int(manifest["seed"]), ticks)
    infos = {}
    for robot, meta in sorted(manifest["robots"].items()):
        infos[robot] = RobotInfo(robot, meta["platform"], int(meta["priority"]))
        report.robots.append(_robot_report(log_dir, robot, meta["platform"], ticks, truth, events, paths))

    beliefs = []
    fires_file = log_dir / FIRES_FILE
    if fires_file.exists():
        for line in fires_file.read_text().splitlines():
            record = json.loads(line)
            if record.get("x") is not None:
                beliefs.append((record["id"], np.array([record["x"], record["y"], record["z"]])))

    for fid, meta in sorted(manifest["fires"].items()):
        tick = meta["extinguished_tick"]
        outcome = FireOutcome(
            fid,
            meta["kind"],
            tick,
            meta["extinguished_by"],
            None if tick is None else tick / tick_rate,
        )
        position = np.array(meta["position"], dtype=np.float64)
        if beliefs:
            best = min(beliefs, key=lambda b: (float(np.linalg.norm(b[1] - position)), b[0]))
            outcome.estimate = best[0]
            outcome.estimate_error = float(np.linalg.norm(best[1] - position))
        report.fires.append(outcome)
    report.fires_extinguished = sum(f.extinguished_tick is not None for f in report.fires)

    coordination = log_dir / COORDINATION_FILE
    if coordination.exists():
        report.coordination_violations = count_violations(read_events(coordination), infos)
    report.separation_warnings = sum(e["event"] == "separation" for e in events)
    return report


def write_report(report: RunReport, log_dir: Union[str, Path]) -> Path:
    file = Path(log_dir) / REPORT_FILE
    file.write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    return file
