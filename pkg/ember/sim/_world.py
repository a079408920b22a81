"""Ground truth and the fixed-order tick loop that drives every agent."""

import logging
import math
import zlib
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from attrs import define, evolve, field

from ember.coordination import RobotInfo, ZoneRegistry, assign_tasks
from ember.executive import Executive, Status, TaskRuntime
from ember.fire_estimation import FireTracker, write_fire_report
from ember.mcl import TRACE_COLUMNS, MonteCarloLocalizer, Platform
from ember.planner import Path as PlannedPath
from ember.sim._agent import Agent, Observation
from ember.sim._fleet import Fleet
from ember.sim._logs import (
    COORDINATION_FILE,
    FIRES_FILE,
    RunLog,
    executive_file,
    mcl_file,
    write_csv,
)
from ember.sim._scenario import FireSpec, RobotSpec, Scenario
from ember.sim._sensors import (
    synth_altimeter,
    synth_gps,
    synth_imu,
    synth_lidar,
    synth_odometry,
    synth_thermal,
)
from ember.sim._tasks import register_mission_tasks
from ember.utils import wrap_angle
from ember.world_model import (
    Pose,
    VoxelGrid,
    build_likelihood_grid,
    line_of_sight,
    nearest_occupied_distance_field,
)

logger = logging.getLogger(__name__)

#: Maximum turn rate of every platform, rad/s.
MAX_YAW_RATE = 1.5

#: UAVs closer than this vertically inside one zone raise a separation warning.
SEPARATION = 1.0

SWAY_FREQUENCY = 0.5


def stream(master: int, *key: Union[int, str]) -> np.random.Generator:
    """Independent generator for ``key``; string parts are hashed so the key stays integral."""
    spawn_key = tuple(zlib.crc32(k.encode()) if isinstance(k, str) else int(k) for k in key)
    return np.random.default_rng(np.random.SeedSequence(master, spawn_key=spawn_key))


@define
class FireState:
    spec: FireSpec
    extinguished_tick: Optional[int] = None
    extinguished_by: Optional[str] = None

    @property
    def id(self) -> str:
        return self.spec.id

    @property
    def position(self) -> np.ndarray:
        return self.spec.position

    @property
    def temperature(self) -> float:
        return self.spec.temperature

    @property
    def radius(self) -> float:
        return self.spec.radius

    @property
    def active(self) -> bool:
        return self.extinguished_tick is None


@define
class Body:
    """True state of one robot."""

    spec: RobotSpec
    index: int
    pose: Pose
    previous: Pose
    travelled: float = 0.0
    collisions: int = 0


@define
class World:
    scenario: Scenario
    truth_map: VoxelGrid
    known_map: VoxelGrid
    fleet: Fleet
    log: RunLog = field(factory=RunLog)
    bodies: Dict[str, Body] = field(factory=dict)
    agents: Dict[str, Agent] = field(factory=dict)
    fires: List[FireState] = field(factory=list)
    tick: int = 0
    ticks_run: int = 0
    _streaks: Dict[str, Tuple[str, int, int]] = field(factory=dict, init=False, repr=False)
    _separated: set = field(factory=set, init=False, repr=False)

    @classmethod
    def create(cls, scenario: Scenario) -> "World":
        known = scenario.known_map()
        truth = scenario.truth_map(known)
        layout = scenario.layout

        registry = ZoneRegistry(scenario.zones)
        infos = [RobotInfo(r.id, r.platform, r.priority) for r in scenario.robots]
        for spec, info in zip(scenario.robots, infos):
            band = int(spec.cruise_altitude // 1) if spec.platform is Platform.UAV else None
            registry.register(info, altitude_band=band)
        floors = 1 if scenario.building is None else scenario.building.floors
        fleet = Fleet(
            registry,
            assign_tasks(floors, infos),
            FireTracker(gate=scenario.fire.gate),
            layout=layout,
            min_measurements=scenario.fire.min_measurements,
        )
        world = cls(scenario, truth, known, fleet, fires=[FireState(f) for f in scenario.fires])

        likelihood = build_likelihood_grid(known, scenario.mcl.sigma_map)
        clearance = nearest_occupied_distance_field(known)
        seed = scenario.sim.seed
        for index, spec in enumerate(scenario.robots):
            pose = Pose(*spec.start, yaw=spec.yaw)
            world.bodies[spec.id] = Body(spec, index, pose, pose)
            config = evolve(scenario.mcl, platform=spec.platform)
            localizer = MonteCarloLocalizer.start(pose, config, likelihood, stream(seed, index, "mcl"))
            plan_map = known.slice_z(float(spec.start[2])) if spec.platform is Platform.UGV else known
            agent = Agent(
                spec=spec,
                localizer=localizer,
                fleet=fleet,
                actuator=world,
                known_map=known,
                plan_map=plan_map,
                clearance=clearance,
                planner=scenario.planner,
                fire=scenario.fire,
                extinguish=scenario.extinguish,
                camera=scenario.sensors.camera,
                dt=scenario.sim.dt,
                layout_interior=(lambda p: False) if layout is None else layout.interior,
            )
            agent.executive = Executive(scenario.mission_tree(spec), register_mission_tasks(TaskRuntime(), agent))
            world.agents[spec.id] = agent
        return world

    ############
    # Actuator #
    ############

    def log_event(self, tick: int, robot: str, event: str, detail: str = "") -> None:
        self.log.log_event(tick, robot, event, detail)

    def log_path(self, tick: int, robot: str, path: PlannedPath) -> None:
        self.log.log_path(tick, robot, path)

    def discharge(self, robot: str, tick: int) -> Optional[str]:
        """Attack the nearest engageable fire in range and in view.

        A fire goes out once the same robot has attacked it on consecutive ticks for ``dwell`` seconds.
        """
        body = self.bodies[robot]
        cfg = self.scenario.extinguish
        pos = body.pose.position
        best = None
        for fire in self.fires:
            if not fire.active or not fire.spec.kind.engageable_by(body.spec.platform):
                continue
            d = fire.position - pos
            dist = float(np.linalg.norm(d))
            if dist > cfg.attack_range:
                continue
            if abs(wrap_angle(math.atan2(d[1], d[0]) - body.pose.yaw)) > cfg.aim_tolerance:
                continue
            seen = fire.position - d / dist * min(0.3, dist / 2) if dist > 0 else fire.position
            if not (self.truth_map.contains(pos) and self.truth_map.contains(seen)):
                continue
            if not line_of_sight(pos, seen, self.truth_map):
                continue
            if best is None or (dist, fire.id) < best[:2]:
                best = (dist, fire.id, fire)
        if best is None:
            self._streaks.pop(robot, None)
            return None

        fire = best[2]
        previous = self._streaks.get(robot)
        count = previous[1] + 1 if previous and previous[0] == fire.id and previous[2] == tick - 1 else 1
        self._streaks[robot] = (fire.id, count, tick)
        if count < max(1, math.ceil(cfg.dwell * self.scenario.sim.tick_rate - 1e-9)):
            return None
        fire.extinguished_tick = tick
        fire.extinguished_by = robot
        self._streaks.pop(robot, None)
        self.log_event(tick, robot, "extinguished", fire.id)
        logger.info("tick %d: %s extinguished %s", tick, robot, fire.id)
        return fire.id

    #########
    # Truth #
    #########

    def _move(self, body: Body, agent: Agent) -> None:
        sim = self.scenario.sim
        dt = sim.dt
        cmd = agent.command
        velocity = np.array(cmd.velocity, dtype=np.float64)
        if body.spec.platform is Platform.UGV:
            velocity[2] = 0.0
        speed = float(np.linalg.norm(velocity))
        if speed > body.spec.speed:
            velocity *= body.spec.speed / speed

        pose = body.pose
        yaw = pose.yaw
        if cmd.yaw is not None:
            limit = MAX_YAW_RATE * dt
            yaw = pose.yaw + float(np.clip(wrap_angle(cmd.yaw - pose.yaw), -limit, limit))

        here = pose.position
        there = here + velocity * dt
        if speed > 0 and not self._passable(here, there):
            body.collisions += 1
            self.log_event(self.tick, body.spec.id, "collision", f"{there[0]:.2f},{there[1]:.2f},{there[2]:.2f}")
            there = here

        roll = pitch = 0.0
        if body.spec.platform is Platform.UAV and self.scenario.sensors.sway > 0:
            phase = 2 * math.pi * SWAY_FREQUENCY * self.tick * dt + body.index
            roll = self.scenario.sensors.sway * math.sin(phase)
            pitch = self.scenario.sensors.sway * math.cos(phase)
        body.previous = pose
        body.travelled += float(np.linalg.norm(there - here))
        body.pose = Pose(*there, roll=roll, pitch=pitch, yaw=yaw)

    def _passable(self, a: np.ndarray, b: np.ndarray) -> bool:
        grid = self.truth_map
        return grid.is_free(b) and grid.contains(a) and line_of_sight(a, b, grid)

    def _observe(self, body: Body, perceive: bool) -> Observation:
        sensors = self.scenario.sensors
        seed = self.scenario.sim.seed
        idx, t = body.index, self.tick
        pose = body.pose
        odom = synth_odometry(
            body.previous, pose, sensors.odom_noise, sensors.odom_drift, stream(seed, idx, "odom", t)
        )
        gps = synth_gps(pose.position, self.scenario.layout, sensors.gps_sigma, stream(seed, idx, "gps", t))
        imu = synth_imu(pose, sensors.imu_sigma, sensors.yaw_sigma, sensors.yaw_bias, stream(seed, idx, "imu", t))
        altimeter = None
        if body.spec.platform is Platform.UAV:
            altimeter = synth_altimeter(
                pose.position, self.truth_map, sensors.altimeter_sigma, stream(seed, idx, "alt", t)
            )
        thermal = None
        if perceive:
            active = [f for f in self.fires if f.active]
            thermal = synth_thermal(
                pose, sensors.camera, active, self.truth_map, sensors.ambient, sensors.thermal_range
            )

        def scan() -> np.ndarray:
            return synth_lidar(pose, self.truth_map, sensors.lidar, sensors.lidar_sigma, stream(seed, idx, "lidar", t))

        return Observation(odom=odom, gps=gps, imu=imu, altimeter=altimeter, thermal=thermal, scan=scan)

    def _check_separation(self) -> None:
        registry = self.fleet.registry
        uavs = sorted(b for b in self.bodies if self.bodies[b].spec.platform is Platform.UAV)
        zones = {u: registry.zone_of(self.bodies[u].pose.position) for u in uavs}
        for i, a in enumerate(uavs):
            for b in uavs[i + 1 :]:
                pair = (a, b)
                close = (
                    zones[a] is not None
                    and zones[a] == zones[b]
                    and abs(self.bodies[a].pose.z - self.bodies[b].pose.z) < SEPARATION
                )
                if close and pair not in self._separated:
                    self._separated.add(pair)
                    self.log_event(self.tick, a, "separation", b)
                    logger.warning("tick %d: %s and %s share zone %s", self.tick, a, b, zones[a])
                elif not close:
                    self._separated.discard(pair)

    ########
    # Loop #
    ########

    def step(self, tick: int) -> None:
        """Advance one tick: move, sense and localize, share, coordinate, decide, log."""
        self.tick = tick
        order = sorted(self.agents)
        if tick > 0:
            for rid in order:
                self._move(self.bodies[rid], self.agents[rid])

        perceive = tick % self.scenario.sim.perception_period == 0
        for rid in order:
            agent = self.agents[rid]
            obs = self._observe(self.bodies[rid], perceive)
            agent.localize(obs, tick)
            if perceive:
                agent.perceive(obs, tick)

        self.fleet.consolidate()
        self.fleet.registry.poll(tick)
        for rid in order:
            self.agents[rid].decide(tick)

        for rid in order:
            self.log.log_truth(tick, rid, self.bodies[rid].pose)
        self._check_separation()
        self.ticks_run = tick + 1

    @property
    def finished(self) -> bool:
        return all(a.done for a in self.agents.values())

    def run(self, ticks: Optional[int] = None) -> int:
        """Step until every mission tree has finished or ``ticks`` ticks have run."""
        n = self.scenario.sim.n_ticks if ticks is None else int(ticks)
        for tick in range(n):
            self.step(tick)
            if self.finished:
                break
        for rid in sorted(self.agents):
            if not self.agents[rid].done:
                self.log_event(self.ticks_run - 1, rid, "mission", Status.RUNNING.value)
        return self.ticks_run

    def manifest(self) -> dict:
        sim = self.scenario.sim
        return {
            "name": sim.name,
            "seed": sim.seed,
            "tick_rate": sim.tick_rate,
            "ticks": self.ticks_run,
            "robots": {
                r.id: {"platform": r.platform.value, "priority": r.priority} for r in self.scenario.robots
            },
            "fires": {
                f.id: {
                    "kind": f.spec.kind.value,
                    "position": [float(v) for v in f.position],
                    "extinguished_tick": f.extinguished_tick,
                    "extinguished_by": f.extinguished_by,
                }
                for f in self.fires
            },
        }

    def write(self, out_dir: Union[str, Path]) -> Path:
        out = Path(out_dir)
        self.log.manifest = self.manifest()
        self.log.write(out)
        for rid, agent in sorted(self.agents.items()):
            write_csv(out / mcl_file(rid), TRACE_COLUMNS, (row.as_tuple() for row in agent.localizer.trace))
            assert agent.executive is not None
            agent.executive.write_events(out / executive_file(rid))
        self.fleet.registry.write_events(out / COORDINATION_FILE)
        write_fire_report(self.fleet.tracker, out / FIRES_FILE)
        return out
