"""Global any-angle planning (A*, Theta*, Lazy Theta*) and the validate-and-replan local check."""

import csv
import heapq
import itertools
import json
import logging
import math
import time
from enum import Enum
from pathlib import Path as FilePath
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from attrs import evolve, field, frozen

from ember.exceptions import OccupiedEndpointError, UnreachableError
from ember.utils import to_readonly_array, to_vec3
from ember.validators import Number
from ember.world_model import VoxelGrid, line_of_sight, nearest_occupied_distance_field

__all__ = [
    "Algorithm",
    "Mode",
    "Path",
    "PlanRequest",
    "benchmark",
    "export_path_csv",
    "inflate",
    "plan",
    "plan_a_star",
    "plan_lazy_theta_star",
    "plan_theta_star",
    "planning_map",
    "validate_and_replan",
    "write_benchmark",
]

logger = logging.getLogger(__name__)


class Algorithm(str, Enum):
    ASTAR = "astar"
    THETA = "theta"
    LAZY_THETA = "lazytheta"


class Mode(str, Enum):
    TWO_D = "2d"
    THREE_D = "3d"


@frozen(kw_only=True)
class PlanRequest:
    start: np.ndarray = field(converter=to_vec3)
    goal: np.ndarray = field(converter=to_vec3)
    map: VoxelGrid
    inflation_radius: float = field(default=0.0, converter=float, validator=Number(gte=0))
    mode: Mode = field(default=Mode.THREE_D, converter=Mode)
    coarsen: int = field(default=1, validator=Number(gte=1))
    """Block-maximum downsampling factor applied before inflation."""


@frozen(eq=False)
class Path:
    waypoints: np.ndarray = field(converter=lambda w: to_readonly_array(np.reshape(w, (-1, 3))))
    los_checks_performed: int = 0
    expansions: int = 0
    algorithm: Algorithm = Algorithm.LAZY_THETA
    runtime_ms: float = 0.0

    @property
    def total_length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1)))

    @property
    def start(self) -> np.ndarray:
        return self.waypoints[0]

    @property
    def goal(self) -> np.ndarray:
        return self.waypoints[-1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Path):
            return NotImplemented
        return self.waypoints.shape == other.waypoints.shape and self.waypoints.tobytes() == other.waypoints.tobytes()

    __hash__ = None  # pyright: ignore[reportAssignmentType]


def inflate(grid: VoxelGrid, radius: float) -> VoxelGrid:
    """Occupy every voxel whose center lies within ``radius`` of an occupied voxel center."""
    if radius < 0:
        raise ValueError(f"radius must be >= 0; got {radius}.")
    if radius == 0 or not grid.occupancy.any():
        return grid
    distance = nearest_occupied_distance_field(grid)
    return VoxelGrid(distance <= radius + 1e-9, resolution=grid.resolution, origin=grid.origin)


def planning_map(req: PlanRequest) -> VoxelGrid:
    """Map the search actually runs on: coarsened, inflated and (2D) sliced at the start height."""
    grid = inflate(req.map.coarsen(req.coarsen), req.inflation_radius)
    if req.mode is Mode.TWO_D and grid.dims[2] > 1:
        grid = grid.slice_z(float(req.start[2]))
    return grid


##########
# Search #
##########


class _Graph:
    """Vertex grid over voxel centers, padded by one occupied layer to avoid bounds checks."""

    def __init__(self, grid: VoxelGrid, start: np.ndarray, goal: np.ndarray):
        self.grid = grid
        nx, ny, nz = grid.dims
        padded = np.ones((nx + 2, ny + 2, nz + 2), dtype=bool)
        padded[1:-1, 1:-1, 1:-1] = grid.occupancy
        self.blocked = padded.ravel().tolist()
        self.sy = nz + 2
        self.sx = (ny + 2) * (nz + 2)
        self.start_pos = tuple(float(c) for c in start)
        self.goal_pos = tuple(float(c) for c in goal)
        self.start = self._node(start, "start")
        self.goal = self._node(goal, "goal")

        dzs = (-1, 0, 1) if nz > 1 else (0,)
        self.offsets = []
        for dx, dy, dz in itertools.product((-1, 0, 1), (-1, 0, 1), dzs):
            if dx == dy == dz == 0:
                continue
            box = []
            for ax, ay, az in itertools.product({0, dx}, {0, dy}, {0, dz}):
                if ax == ay == az == 0:
                    continue
                box.append(ax * self.sx + ay * self.sy + az)
            self.offsets.append((dx * self.sx + dy * self.sy + dz, math.sqrt(dx * dx + dy * dy + dz * dz), box))
        self._positions: Dict[int, Tuple[float, float, float]] = {
            self.start: self.start_pos,
            self.goal: self.goal_pos,
        }

    def _node(self, position: np.ndarray, which: str) -> int:
        idx = self.grid.world_to_index(position)
        if idx is None or self.grid.occupancy[idx]:
            raise OccupiedEndpointError(which=which, position=tuple(position))
        return (idx[0] + 1) * self.sx + (idx[1] + 1) * self.sy + idx[2] + 1

    def position(self, node: int) -> Tuple[float, float, float]:
        try:
            return self._positions[node]
        except KeyError:
            pass
        i, rem = divmod(node, self.sx)
        j, k = divmod(rem, self.sy)
        res = self.grid.resolution
        o = self.grid.origin
        pos = (o[0] + (i - 0.5) * res, o[1] + (j - 0.5) * res, o[2] + (k - 0.5) * res)
        self._positions[node] = pos
        return pos

    def neighbors(self, node: int):
        blocked = self.blocked
        for delta, _, box in self.offsets:
            n = node + delta
            if blocked[n]:
                continue
            if any(blocked[node + b] for b in box):
                continue
            yield n

    def distance(self, a: int, b: int) -> float:
        return math.dist(self.position(a), self.position(b))

    def heuristic(self, node: int) -> float:
        return math.dist(self.position(node), self.goal_pos)


def _search(graph: _Graph, algorithm: Algorithm, los_checks: int) -> Tuple[List[int], int, int]:
    """Best-first search; returns (node path, expansions, LOS checks)."""
    start, goal = graph.start, graph.goal
    grid = graph.grid
    g: Dict[int, float] = {start: 0.0}
    parent: Dict[int, int] = {start: start}
    needs_los: Dict[int, bool] = {start: False}
    closed = set()
    h0 = graph.heuristic(start)
    heap = [(h0, h0, start, 0.0)]
    expansions = 0

    def _los(a: int, b: int) -> bool:
        nonlocal los_checks
        los_checks += 1
        return line_of_sight(graph.position(a), graph.position(b), grid)

    def _push(node: int):
        h = graph.heuristic(node)
        heapq.heappush(heap, (g[node] + h, h, node, g[node]))

    while heap:
        _, _, u, g_pushed = heapq.heappop(heap)
        if u in closed or g_pushed != g[u]:
            continue

        if algorithm is Algorithm.LAZY_THETA and needs_los[u]:
            needs_los[u] = False
            if not _los(parent[u], u):
                best: Optional[Tuple[float, int]] = None
                for n in graph.neighbors(u):
                    if n in closed:
                        candidate = (g[n] + graph.distance(n, u), n)
                        if best is None or candidate < best:
                            best = candidate
                assert best is not None  # The node that generated ``u`` is closed.
                g[u], parent[u] = best
                if g[u] != g_pushed:
                    _push(u)
                    continue

        closed.add(u)
        expansions += 1
        if u == goal:
            break

        p = parent[u]
        for n in graph.neighbors(u):
            if n in closed:
                continue
            if algorithm is Algorithm.ASTAR or p == u:
                cost, par, lazy = g[u] + graph.distance(u, n), u, False
            elif algorithm is Algorithm.THETA:
                if _los(p, n):
                    cost, par, lazy = g[p] + graph.distance(p, n), p, False
                else:
                    cost, par, lazy = g[u] + graph.distance(u, n), u, False
            else:
                cost, par, lazy = g[p] + graph.distance(p, n), p, True
            if cost < g.get(n, math.inf):
                g[n] = cost
                parent[n] = par
                needs_los[n] = lazy
                _push(n)
    else:
        raise UnreachableError(start=graph.start_pos, goal=graph.goal_pos)

    nodes = [goal]
    while nodes[-1] != start:
        nodes.append(parent[nodes[-1]])
    nodes.reverse()
    return nodes, expansions, los_checks


def _plan(req: PlanRequest, algorithm: Algorithm) -> Path:
    t0 = time.perf_counter()
    grid = planning_map(req)
    start = np.array(req.start, dtype=np.float64)
    goal = np.array(req.goal, dtype=np.float64)
    if req.mode is Mode.TWO_D:
        goal[2] = start[2]

    graph = _Graph(grid, start, goal)
    los_checks = 0
    if graph.start == graph.goal:
        nodes = [graph.start, graph.goal]
        expansions = 0
    elif algorithm is not Algorithm.ASTAR and line_of_sight(start, goal, grid):
        nodes = [graph.start, graph.goal]
        expansions, los_checks = 0, 1
    else:
        los_checks = 0 if algorithm is Algorithm.ASTAR else 1
        nodes, expansions, los_checks = _search(graph, algorithm, los_checks)

    waypoints = [graph.start_pos, *(graph.position(n) for n in nodes[1:-1]), graph.goal_pos]
    runtime_ms = (time.perf_counter() - t0) * 1000.0
    path = Path(np.array(waypoints), los_checks, expansions, algorithm, runtime_ms)
    logger.debug(
        "%s: %d waypoints, length %.3f, %d expansions, %d LOS checks",
        algorithm.value,
        len(waypoints),
        path.total_length,
        expansions,
        los_checks,
    )
    return path


def plan_a_star(req: PlanRequest) -> Path:
    """Grid A* (8-connected in 2D, 26-connected in 3D) with a Euclidean heuristic."""
    return _plan(req, Algorithm.ASTAR)


def plan_theta_star(req: PlanRequest) -> Path:
    """Theta*: every relaxation first tries to connect to the grandparent by line of sight."""
    return _plan(req, Algorithm.THETA)


def plan_lazy_theta_star(req: PlanRequest) -> Path:
    """Lazy Theta*: assume line of sight when relaxing and verify once per expansion.

    A node whose assumed parent turns out to be hidden is reattached to its best expanded
    neighbor and re-queued, so the returned path is never longer than the grid A* path.

    Raises
    ------
    OccupiedEndpointError
        Start or goal is occupied on the (inflated) planning map.
    UnreachableError
        No path exists.
    """
    return _plan(req, Algorithm.LAZY_THETA)


_PLANNERS = {
    Algorithm.ASTAR: plan_a_star,
    Algorithm.THETA: plan_theta_star,
    Algorithm.LAZY_THETA: plan_lazy_theta_star,
}


def plan(req: PlanRequest, algorithm: Union[str, Algorithm] = Algorithm.LAZY_THETA) -> Path:
    return _PLANNERS[Algorithm(algorithm)](req)


#################
# Local replans #
#################


def validate_and_replan(
    path: Path,
    live_obstacles,
    grid: VoxelGrid,
    req: PlanRequest,
    position: Optional[Sequence[float]] = None,
) -> Path:
    """Replan when newly observed obstacles block the remaining ``path``.

    Parameters
    ----------
    path: Path
        Remaining active path.
    live_obstacles: array-like
        ``(K, 3)`` obstacle points in the map frame.
    grid: VoxelGrid
        Known map the path was planned on.
    req: PlanRequest
        Original request; its inflation, mode and coarsening are reused.
    position: Optional[Sequence[float]]
        Current robot position; defaults to the first waypoint of ``path``.

    Returns
    -------
    Path
        ``path`` itself if still collision-free, otherwise a new plan from ``position`` to the same goal.

    Raises
    ------
    UnreachableError
        The augmented map seals off the goal.
    """
    obstacles = np.reshape(np.asarray(live_obstacles, dtype=np.float64), (-1, 3))
    if len(obstacles) == 0:
        return path
    here = np.asarray(path.start if position is None else position, dtype=np.float64)
    # Points inside the robot's own clearance cannot be planned around.
    keep = np.linalg.norm(obstacles - here, axis=1) > req.inflation_radius + 2 * grid.resolution * req.coarsen
    obstacles = obstacles[keep]
    if len(obstacles) == 0:
        return path

    augmented = grid.with_points(obstacles)
    if augmented == grid:
        return path
    replan_req = evolve(req, start=here, map=augmented)
    check_map = planning_map(replan_req)
    baseline = planning_map(evolve(req, start=here, map=grid))
    waypoints = np.vstack([here, path.waypoints[1:]]) if position is not None else path.waypoints
    if req.mode is Mode.TWO_D:
        waypoints = np.array(waypoints)
        waypoints[:, 2] = here[2]
    for a, b in zip(waypoints[:-1], waypoints[1:]):
        if not (check_map.contains(a) and check_map.contains(b)):
            continue
        if not line_of_sight(a, b, check_map) and line_of_sight(a, b, baseline):
            logger.info("Live obstacle blocks the active path; replanning.")
            return plan(replan_req, path.algorithm)
    return path


###########
# Exports #
###########


def export_path_csv(path: Path, file: Union[str, FilePath]) -> None:
    with FilePath(file).open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(("index", "x", "y", "z"))
        for i, (x, y, z) in enumerate(path.waypoints):
            writer.writerow((i, repr(float(x)), repr(float(y)), repr(float(z))))


def benchmark(
    maps: Sequence[VoxelGrid],
    instances_per_map: int = 1,
    seed: int = 0,
    algorithms: Sequence[Algorithm] = (Algorithm.ASTAR, Algorithm.THETA, Algorithm.LAZY_THETA),
    inflation_radius: float = 0.0,
) -> List[dict]:
    """Plan random free start/goal pairs with every algorithm.

    Returns
    -------
    list[dict]
        One record per (instance, algorithm) with ``instance``, ``algorithm``, ``length``,
        ``expansions``, ``los_checks``, ``runtime_ms`` (``length`` is ``None`` when unreachable).
    """
    rng = np.random.default_rng(seed)
    records = []
    instance = 0
    for grid in maps:
        mode = Mode.TWO_D if grid.dims[2] == 1 else Mode.THREE_D
        free = np.argwhere(~inflate(grid, inflation_radius).occupancy)
        if len(free) < 2:
            continue
        for _ in range(instances_per_map):
            a, b = rng.choice(len(free), size=2, replace=False)
            req = PlanRequest(
                start=grid.index_to_world(free[a]),
                goal=grid.index_to_world(free[b]),
                map=grid,
                inflation_radius=inflation_radius,
                mode=mode,
            )
            for algorithm in algorithms:
                try:
                    result = plan(req, algorithm)
                except UnreachableError:
                    records.append(
                        {
                            "instance": instance,
                            "algorithm": Algorithm(algorithm).value,
                            "length": None,
                            "expansions": None,
                            "los_checks": None,
                            "runtime_ms": None,
                        }
                    )
                    continue
                records.append(
                    {
                        "instance": instance,
                        "algorithm": result.algorithm.value,
                        "length": result.total_length,
                        "expansions": result.expansions,
                        "los_checks": result.los_checks_performed,
                        "runtime_ms": result.runtime_ms,
                    }
                )
            instance += 1
    return records


def write_benchmark(records: Sequence[dict], file: Union[str, FilePath]) -> None:
    with FilePath(file).open("w") as f:
        json.dump(list(records), f, indent=2)
