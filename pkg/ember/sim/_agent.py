"""One robot's onboard software: localization, fire perception, navigation and its mission tree.

An :class:`Agent` never sees ground truth. It receives :class:`Observation` objects and acts
through its velocity :class:`Command` and the :class:`Actuator` interface.
"""

import logging
import math
from typing import Callable, List, Optional, Protocol, Set, Tuple

import numpy as np
from attrs import define, field, frozen
from scipy.spatial.transform import Rotation

from ember.coordination import Decision
from ember.exceptions import OccupiedEndpointError, SingularCovarianceError, UnreachableError
from ember.executive import Executive, Status
from ember.fire_estimation import (
    CameraModel,
    FireConfig,
    ThermalImage,
    associate_range,
    make_measurement,
    pixel_to_ray,
    segment_fire,
)
from ember.mcl import MonteCarloLocalizer, OdomDelta, Platform, SensorFrame, should_update
from ember.planner import Mode, Path, PlanRequest, plan, planning_map, validate_and_replan
from ember.sim._fleet import Fleet
from ember.sim._scenario import ExtinguishConfig, PlannerConfig, RobotSpec
from ember.world_model import Pose, VoxelGrid, line_of_sight

logger = logging.getLogger(__name__)

#: LIDAR points farther than this are not trusted as evidence of unmapped obstacles.
LIVE_OBSTACLE_RANGE = 4.0

#: Ticks without getting closer to the current waypoint before replanning.
STUCK_TICKS = 50

MAX_REPLANS = 3


@frozen
class Command:
    velocity: np.ndarray = field(factory=lambda: np.zeros(3))
    yaw: Optional[float] = None
    """Desired heading; ``None`` keeps the current one."""


STOP = Command()


@define
class Observation:
    """Sensor data of one tick; the LIDAR scan is only synthesized when read."""

    odom: OdomDelta
    gps: Optional[np.ndarray]
    imu: Tuple[float, float, float]
    altimeter: Optional[float]
    thermal: Optional[ThermalImage]
    scan: Callable[[], np.ndarray] = field(repr=False)
    _cloud: Optional[np.ndarray] = field(default=None, init=False, repr=False)

    @property
    def cloud(self) -> np.ndarray:
        if self._cloud is None:
            self._cloud = self.scan()
        return self._cloud

    @property
    def has_cloud(self) -> bool:
        return self._cloud is not None

    def frame(self, with_cloud: bool = True) -> SensorFrame:
        roll, pitch, yaw = self.imu
        return SensorFrame(
            cloud=self.cloud if with_cloud else np.zeros((0, 3)),
            gps=self.gps,
            imu_roll=roll,
            imu_pitch=pitch,
            imu_yaw=yaw,
            altimeter=self.altimeter,
        )


class Actuator(Protocol):
    def discharge(self, robot: str, tick: int) -> Optional[str]:
        """Apply the extinguisher this tick; returns the id of a fire put out by it."""
        ...

    def log_event(self, tick: int, robot: str, event: str, detail: str = "") -> None: ...

    def log_path(self, tick: int, robot: str, path: Path) -> None: ...


def _nearest_free(grid: VoxelGrid, point: np.ndarray, radius: float) -> Optional[np.ndarray]:
    """Center of the closest free voxel within ``radius`` of ``point``."""
    if grid.is_free(point):
        return point
    r = int(math.ceil(radius / grid.resolution))
    center = np.floor(grid.to_grid(point)).astype(int)
    lo = np.clip(center - r, 0, grid.dims)
    hi = np.clip(center + r + 1, 0, grid.dims)
    window = ~grid.occupancy[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]]
    free = np.argwhere(window)
    if len(free) == 0:
        return None
    centers = grid.index_to_world(free + lo)
    d = np.linalg.norm(centers - point, axis=1)
    best = int(np.argmin(d))
    if d[best] > radius:
        return None
    return centers[best]


@define
class Navigator:
    """Plans to ``goal`` and chases the resulting waypoints."""

    agent: "Agent"
    goal: np.ndarray
    path: Optional[Path] = None
    request: Optional[PlanRequest] = None
    index: int = 1
    best: float = math.inf
    since_progress: int = 0
    replans: int = 0
    failed: bool = False

    def plan(self) -> bool:
        result = self.agent.plan_to(self.goal)
        if result is None:
            self.failed = True
            return False
        self.request, self.path = result
        self.index = 1
        self.best = math.inf
        self.since_progress = 0
        return True

    def step(self) -> Status:
        agent = self.agent
        if self.failed or self.path is None:
            return Status.FAILURE
        if agent.replan_due() and self.request is not None:
            self._check_live_obstacles()
        wps = self.path.waypoints
        here = agent.position
        tol = agent.planner.goal_tolerance
        while self.index < len(wps) - 1 and agent.distance(here, wps[self.index]) <= tol:
            self.index += 1
            self.best = math.inf
        target = wps[min(self.index, len(wps) - 1)]
        dist = agent.distance(here, target)
        final = self.index >= len(wps) - 1
        if final and dist <= tol:
            agent.stop()
            return Status.SUCCESS

        if agent.waiting:
            self.since_progress = 0
        elif dist < self.best - 0.05:
            self.best = dist
            self.since_progress = 0
        else:
            self.since_progress += 1
            if self.since_progress > STUCK_TICKS:
                return self._replan("no progress")
        agent.move_towards(target, slow_down=final)
        return Status.RUNNING

    def _replan(self, reason: str) -> Status:
        self.replans += 1
        self.agent.log("replan", reason)
        if self.replans > MAX_REPLANS or not self.plan():
            self.agent.stop()
            return Status.FAILURE
        return Status.RUNNING

    def _check_live_obstacles(self) -> None:
        agent = self.agent
        assert self.path is not None and self.request is not None
        remaining = Path(
            np.vstack([agent.position, self.path.waypoints[self.index :]]),
            algorithm=self.path.algorithm,
        )
        try:
            new = validate_and_replan(
                remaining, agent.live_points(), agent.plan_map, self.request, position=agent.position
            )
        except (UnreachableError, OccupiedEndpointError):
            self.failed = True
            agent.log("plan_failed", "live obstacles seal the goal")
            return
        if new is not remaining:
            self.path = new
            self.index = 1
            self.best = math.inf
            agent.log("replan", "unmapped obstacle")
            agent.actuator.log_path(agent.tick, agent.id, new)


@define
class Agent:
    spec: RobotSpec
    localizer: MonteCarloLocalizer
    fleet: Fleet
    actuator: Actuator
    known_map: VoxelGrid
    plan_map: VoxelGrid
    clearance: np.ndarray = field(repr=False)
    """Distance to the nearest mapped obstacle per voxel of ``known_map``."""

    planner: PlannerConfig
    fire: FireConfig
    extinguish: ExtinguishConfig
    camera: CameraModel
    dt: float
    layout_interior: Callable[[np.ndarray], bool]
    executive: Optional[Executive] = None
    command: Command = STOP
    tick: int = 0
    waiting: bool = False
    held_zone: Optional[str] = None
    pending_zone: Optional[str] = None
    done: bool = False
    live: Set[Tuple[int, int, int]] = field(factory=set, repr=False)
    _live_dirty: bool = field(default=False, repr=False)
    _imu: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    _search_map: Optional[VoxelGrid] = field(default=None, repr=False)

    @property
    def id(self) -> str:
        return self.spec.id

    @property
    def platform(self) -> Platform:
        return self.spec.platform

    @property
    def pose(self) -> Pose:
        return self.localizer.current_pose()

    @property
    def position(self) -> np.ndarray:
        return self.pose.position

    @property
    def mode(self) -> Mode:
        return Mode.TWO_D if self.platform is Platform.UGV else Mode.THREE_D

    def distance(self, a, b) -> float:
        d = np.asarray(b, dtype=np.float64) - np.asarray(a, dtype=np.float64)
        if self.mode is Mode.TWO_D:
            d = d[:2]
        return float(np.linalg.norm(d))

    def log(self, event: str, detail: str = "") -> None:
        self.actuator.log_event(self.tick, self.id, event, detail)

    ###############
    # Estimation #
    ###############

    def localize(self, obs: Observation, tick: int) -> None:
        self.tick = tick
        self._imu = obs.imu
        pending = self.localizer.accumulated.compose(obs.odom)
        cycle = should_update(pending, self.localizer.config)
        self.localizer.update(obs.odom, obs.frame(with_cloud=cycle), tick)
        if obs.has_cloud:
            self._track_live_obstacles(obs.cloud)

    def _body_to_map(self, points: np.ndarray) -> np.ndarray:
        pose = self.pose
        roll, pitch, _ = self._imu
        rot = Rotation.from_euler("ZYX", [pose.yaw, pitch, roll])
        return rot.apply(points) + pose.position

    def _track_live_obstacles(self, cloud: np.ndarray) -> None:
        if not self.planner.replan or len(cloud) == 0:
            return
        near = np.linalg.norm(cloud, axis=1) <= LIVE_OBSTACLE_RANGE
        points = self._body_to_map(cloud[near])
        if self.mode is Mode.TWO_D:
            z = self.position[2]
            points = points[(points[:, 2] > 0.05) & (points[:, 2] < 1.5)]
            points[:, 2] = z
        idx, inside = self.known_map.world_to_index_many(points)
        idx = idx[inside]
        if len(idx) == 0:
            return
        unmapped = self.clearance[idx[:, 0], idx[:, 1], idx[:, 2]] > 2 * self.known_map.resolution
        for i in map(tuple, idx[unmapped]):
            if i not in self.live:
                self.live.add(i)  # pyright: ignore[reportArgumentType]
                self._live_dirty = True

    def live_points(self) -> np.ndarray:
        if not self.live:
            return np.zeros((0, 3))
        return self.known_map.index_to_world(np.array(sorted(self.live)))

    def replan_due(self) -> bool:
        due = self._live_dirty
        self._live_dirty = False
        return due

    def perceive(self, obs: Observation, tick: int) -> None:
        """Detect fires in the thermal image and report range-annotated bearings to the fleet."""
        if obs.thermal is None:
            return
        pose = self.pose
        roll, pitch, _ = obs.imu
        body = Pose(x=pose.x, y=pose.y, z=pose.z, roll=roll, pitch=pitch, yaw=pose.yaw)
        img = ThermalImage(
            temperatures=obs.thermal.temperatures, camera=self.camera, pose=self.camera.camera_pose(body)
        )
        detections = segment_fire(img, self.fire.threshold, self.fire.min_pixels)
        if not detections:
            return
        cloud = self._body_to_map(obs.cloud) if len(obs.cloud) else np.zeros((0, 3))
        inside = self.layout_interior(pose.position)
        position_covariance = np.asarray(self.localizer.covariance)[:3, :3]
        for det in detections:
            origin, direction = pixel_to_ray(det, img)
            association = associate_range(
                origin,
                direction,
                cloud,
                self.fire.angular_window,
                self.known_map,
                self.fire.max_range,
                sigma_lidar=self.fire.sigma_lidar,
                r0=self.fire.r0,
                sigma_fallback=self.fire.sigma_fallback,
            )
            m = make_measurement(
                origin, direction, association, self.fire.bearing_sigma, position_covariance, robot=self.id
            )
            try:
                self.fleet.report(m, tick, inside)
            except SingularCovarianceError:
                logger.debug("%s: dropped a degenerate fire measurement", self.id)

    ##############
    # Navigation #
    ##############

    def _request(self, start, goal) -> PlanRequest:
        ugv = self.platform is Platform.UGV
        return PlanRequest(
            start=start,
            goal=goal,
            map=self.plan_map,
            inflation_radius=self.planner.ugv_inflation if ugv else self.planner.uav_inflation,
            mode=self.mode,
            coarsen=1 if ugv else self.planner.uav_coarsen,
        )

    @property
    def search_map(self) -> VoxelGrid:
        """Coarsened and inflated ``plan_map``, the map every search of this agent runs on."""
        if self._search_map is None:
            self._search_map = planning_map(self._request(self.position, self.position))
        return self._search_map

    def plan_to(self, goal) -> Optional[Tuple[PlanRequest, Path]]:
        goal = np.asarray(goal, dtype=np.float64)
        start = self.position
        if self.mode is Mode.TWO_D:
            goal = np.array([goal[0], goal[1], start[2]])
        snapped = _nearest_free(self.search_map, start, 1.5)
        if snapped is None:
            self.log("plan_failed", "start blocked")
            return None
        req = self._request(snapped, goal)
        try:
            path = plan(req, self.planner.algorithm)
        except (UnreachableError, OccupiedEndpointError) as e:
            self.log("plan_failed", str(e))
            return None
        if snapped is not start:
            path = Path(np.vstack([start, path.waypoints]), path.los_checks_performed, path.expansions, path.algorithm)
        self.actuator.log_path(self.tick, self.id, path)
        return req, path

    def free_for_planning(self, point) -> bool:
        return self.search_map.is_free(point)

    def move_towards(self, target, slow_down: bool = True, speed: Optional[float] = None) -> None:
        here = self.position
        d = np.asarray(target, dtype=np.float64) - here
        if self.platform is Platform.UGV:
            d[2] = 0.0
        dist = float(np.linalg.norm(d))
        if dist < 1e-9:
            self.stop()
            return
        v_max = self.spec.speed if speed is None else min(speed, self.spec.speed)
        v = min(v_max, dist / self.dt) if slow_down else v_max
        velocity = d / dist * v
        heading = None
        if math.hypot(velocity[0], velocity[1]) > 0.05:
            heading = math.atan2(velocity[1], velocity[0])
        self.command = Command(velocity, heading)

    def face(self, point) -> None:
        d = np.asarray(point, dtype=np.float64) - self.position
        self.command = Command(np.zeros(3), math.atan2(d[1], d[0]))

    def stop(self) -> None:
        self.command = STOP

    ############
    # Decision #
    ############

    def decide(self, tick: int) -> None:
        """Tick the mission tree, then gate the resulting command on the zone registry."""
        self.tick = tick
        if self.done or self.executive is None:
            self.command = STOP
            return
        status = self.executive.tick(tick)
        if status is not Status.RUNNING:
            self.done = True
            self.command = STOP
            self.log("mission", status.value)
            self._release(tick)
            return
        self._gate(tick)

    def _release(self, tick: int) -> None:
        registry = self.fleet.registry
        if self.held_zone is not None:
            registry.release(self.id, self.held_zone, tick)
            self.held_zone = None
        if self.pending_zone is not None:
            registry.cancel(self.id, self.pending_zone)
            self.pending_zone = None

    def _gate(self, tick: int) -> None:
        registry = self.fleet.registry
        if self.pending_zone is not None and registry.holder_zone(self.id) == self.pending_zone:
            self.held_zone, self.pending_zone = self.pending_zone, None
        here = self.position
        velocity = self.command.velocity
        speed = float(np.linalg.norm(velocity))
        probe = here + velocity / speed * self.planner.zone_probe if speed > 0 else here
        here_zone = registry.zone_of(here)
        ahead = registry.zone_of(probe)

        if self.held_zone is not None and self.held_zone not in (here_zone, ahead):
            registry.release(self.id, self.held_zone, tick)
            self.held_zone = None
        if self.pending_zone is not None and self.pending_zone != ahead:
            registry.cancel(self.id, self.pending_zone)
            self.pending_zone = None

        self.waiting = False
        if ahead is None or ahead == self.held_zone:
            return
        if self.held_zone is not None:
            registry.release(self.id, self.held_zone, tick)
            self.held_zone = None
        decision = registry.request_enter(self.id, ahead, tick)
        if decision is Decision.GRANTED:
            self.held_zone = ahead
            self.pending_zone = None
        else:
            self.pending_zone = ahead
            self.waiting = True
            self.command = Command(np.zeros(3), self.command.yaw)


def vantage_point(agent: Agent, fire: np.ndarray, standoff: float, candidates: int = 16) -> Optional[np.ndarray]:
    """Free point ``standoff`` away from ``fire`` with a clear view of it, preferring the agent's side."""
    here = agent.position
    base = math.atan2(here[1] - fire[1], here[0] - fire[0])
    if agent.platform is Platform.UGV:
        z = here[2]
    else:
        z = max(float(fire[2]), 1.0)
    offsets: List[float] = [0.0]
    for k in range(1, candidates // 2 + 1):
        offsets += [k * 2 * math.pi / candidates, -k * 2 * math.pi / candidates]
    for off in offsets[:candidates]:
        a = base + off
        p = np.array([fire[0] + standoff * math.cos(a), fire[1] + standoff * math.sin(a), z])
        if not agent.known_map.contains(p) or not agent.free_for_planning(p):
            continue
        toward = p - fire
        n = float(np.linalg.norm(toward))
        seen_from = fire + toward / n * min(0.3, n / 2) if n > 0 else fire
        if not agent.known_map.contains(seen_from):
            continue
        if line_of_sight(p, seen_from, agent.known_map):
            return p
    return None
