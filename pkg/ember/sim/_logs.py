"""Run logs.

Everything is buffered in memory and written once at the end of a run. No file holds wall-clock
values, so two runs of the same scenario and seed produce byte-identical logs.
"""

import csv
import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np
from attrs import define, field

from ember.planner import Path as PlannedPath
from ember.world_model import Pose

TRUTH_COLUMNS = ("tick", "robot", "x", "y", "z", "roll", "pitch", "yaw")
EVENTS_COLUMNS = ("tick", "robot", "event", "detail")
PATHS_COLUMNS = ("tick", "robot", "plan", "index", "x", "y", "z")

TRUTH_FILE = "truth.csv"
EVENTS_FILE = "events.csv"
PATHS_FILE = "paths.csv"
COORDINATION_FILE = "coordination.csv"
FIRES_FILE = "fires.jsonl"
MANIFEST_FILE = "manifest.json"
REPORT_FILE = "report.json"


def mcl_file(robot: str) -> str:
    return f"mcl_{robot}.csv"


def executive_file(robot: str) -> str:
    return f"executive_{robot}.csv"


def _round(value: float) -> float:
    return round(float(value), 6)


@define
class RunLog:
    truth: List[Tuple] = field(factory=list)
    events: List[Tuple] = field(factory=list)
    paths: List[Tuple] = field(factory=list)
    manifest: Dict[str, Any] = field(factory=dict)
    _plans: Dict[str, int] = field(factory=dict, init=False, repr=False)

    def log_truth(self, tick: int, robot: str, pose: Pose) -> None:
        self.truth.append(
            (tick, robot, *(_round(v) for v in (pose.x, pose.y, pose.z, pose.roll, pose.pitch, pose.yaw)))
        )

    def log_event(self, tick: int, robot: str, event: str, detail: str = "") -> None:
        self.events.append((tick, robot, event, detail))

    def log_path(self, tick: int, robot: str, path: PlannedPath) -> None:
        n = self._plans.get(robot, 0)
        self._plans[robot] = n + 1
        for i, (x, y, z) in enumerate(np.asarray(path.waypoints)):
            self.paths.append((tick, robot, n, i, _round(x), _round(y), _round(z)))

    def write(self, out_dir: Union[str, Path]) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / TRUTH_FILE, TRUTH_COLUMNS, self.truth)
        write_csv(out / EVENTS_FILE, EVENTS_COLUMNS, self.events)
        write_csv(out / PATHS_FILE, PATHS_COLUMNS, self.paths)
        (out / MANIFEST_FILE).write_text(json.dumps(self.manifest, indent=2, sort_keys=True) + "\n")


def write_csv(file: Path, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    with file.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(columns)
        writer.writerows(rows)


def read_csv(file: Union[str, Path]) -> List[Dict[str, str]]:
    with Path(file).open(newline="") as f:
        return list(csv.DictReader(f))
