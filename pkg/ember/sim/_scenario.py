"""Scenario files: TOML with fixed sections and named tables, see ``docs/source/scenario.rst``."""

import logging
import math
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, Mapping, Optional, Tuple, Type, TypeVar, Union

import numpy as np
from attrs import field, frozen

from ember.config import Env, Schema, Toml
from ember.coordination import Zone
from ember.exceptions import BuildingError, EmberError, ScenarioError, TreeParseError
from ember.executive import MISSION_TASKS, BtNode, NodeKind, build_fire_mission_tree, load_tree_file
from ember.fire_estimation import CameraModel, FireConfig
from ember.mcl import MclConfig, Platform
from ember.planner import Algorithm
from ember.sim._building import BuildingLayout, BuildingParams, MapParams, Opening, generate_building
from ember.sim._sensors import BeamPattern, SensorConfig
from ember.utils import optional_vec3, to_vec3
from ember.validators import Number
from ember.world_model import VoxelGrid, load_map

__all__ = [
    "ExtinguishConfig",
    "FireKind",
    "FireSpec",
    "ObstacleSpec",
    "PlannerConfig",
    "RobotSpec",
    "SCENARIO_SCHEMA",
    "Scenario",
    "SimConfig",
    "bundled_scenario",
    "load_scenario",
]

logger = logging.getLogger(__name__)

T = TypeVar("T")

SCENARIO_DIR = Path(__file__).parent.parent / "scenarios"

UGV_MAX_SPEED = 0.7

SCENARIO_SCHEMA = Schema(
    sections={
        "sim": {"name": str, "tick_rate": float, "duration": float, "seed": int, "perception_period": int},
        "map": {"size": list, "resolution": float, "file": str},
        "building": {
            "enabled": bool,
            "x": float,
            "y": float,
            "width": float,
            "depth": float,
            "floors": int,
            "floor_height": float,
            "wall_thickness": float,
            "random_windows": int,
            "facade_margin": float,
        },
        "sensors": {
            "lidar_rows": int,
            "lidar_cols": int,
            "lidar_fov_deg": float,
            "lidar_range": float,
            "lidar_min_range": float,
            "lidar_sigma": float,
            "gps_sigma": float,
            "imu_sigma": float,
            "yaw_sigma": float,
            "yaw_bias": float,
            "altimeter_sigma": float,
            "odom_noise": float,
            "odom_drift": float,
            "thermal_width": int,
            "thermal_height": int,
            "thermal_focal": float,
            "camera_tilt_deg": float,
            "ambient": float,
            "thermal_range": float,
            "sway": float,
        },
        "mcl": {
            "n_particles": int,
            "alpha": float,
            "sigma_gps": float,
            "sigma_map": float,
            "trans_threshold": float,
            "rot_threshold": float,
            "k_x": float,
            "k_y": float,
            "k_z": float,
            "k_yaw": float,
            "yaw_resample_sigma": float,
            "z_resample_sigma": float,
            "init_spread": list,
            "resample_ratio": float,
            "max_cloud_points": int,
            "workers": int,
        },
        "planner": {
            "algorithm": str,
            "ugv_inflation": float,
            "uav_inflation": float,
            "uav_coarsen": int,
            "replan": bool,
            "goal_tolerance": float,
            "zone_probe": float,
        },
        "fire": {
            "threshold": float,
            "min_pixels": int,
            "angular_window_deg": float,
            "sigma_lidar": float,
            "r0": float,
            "sigma_fallback": float,
            "bearing_sigma_deg": float,
            "max_range": float,
            "gate": float,
            "min_measurements": int,
            "attack_range": float,
            "dwell": float,
            "aim_tolerance_deg": float,
            "standoff": float,
            "give_up": float,
        },
    },
    tables={
        "robots": {
            "platform": str,
            "priority": int,
            "start": list,
            "yaw": float,
            "home": list,
            "cruise_altitude": float,
            "max_speed": float,
            "waypoints": list,
            "tree": str,
            "mission_timeout": float,
            "search_laps": int,
        },
        "fires": {"position": list, "temperature": float, "radius": float, "kind": str},
        "zones": {"lower": list, "upper": list, "may_overlap": bool},
        "obstacles": {"lower": list, "upper": list},
        "openings": {
            "kind": str,
            "face": str,
            "floor": int,
            "center": float,
            "width": float,
            "height": float,
            "sill": float,
        },
    },
)


@frozen(kw_only=True)
class SimConfig:
    name: str = "scenario"
    tick_rate: float = field(default=10.0, converter=float, validator=Number(gt=0))
    duration: float = field(default=240.0, converter=float, validator=Number(gt=0))
    seed: int = field(default=0, validator=Number(gte=0))
    perception_period: int = field(default=1, validator=Number(gte=1))
    """Thermal processing runs every this many ticks."""

    @property
    def dt(self) -> float:
        return 1.0 / self.tick_rate

    @property
    def n_ticks(self) -> int:
        return int(round(self.duration * self.tick_rate))


@frozen(kw_only=True)
class PlannerConfig:
    algorithm: Algorithm = field(default=Algorithm.LAZY_THETA, converter=Algorithm)
    ugv_inflation: float = field(default=0.3, converter=float, validator=Number(gte=0))
    uav_inflation: float = field(default=0.5, converter=float, validator=Number(gte=0))
    uav_coarsen: int = field(default=2, validator=Number(gte=1))
    replan: bool = True
    """Check the active path against unmapped obstacles seen by the LIDAR."""

    goal_tolerance: float = field(default=0.3, converter=float, validator=Number(gt=0))
    zone_probe: float = field(default=1.0, converter=float, validator=Number(gt=0))
    """Distance ahead of the robot checked against zones before it moves."""


@frozen(kw_only=True)
class ExtinguishConfig:
    attack_range: float = field(default=2.0, converter=float, validator=Number(gt=0))
    dwell: float = field(default=2.0, converter=float, validator=Number(gte=0))
    """Seconds the attack conditions must hold without interruption."""

    aim_tolerance: float = field(default=math.radians(20.0), converter=float, validator=Number(gt=0))
    standoff: float = field(default=1.2, converter=float, validator=Number(gt=0))
    give_up: float = field(default=10.0, converter=float, validator=Number(gt=0))
    """Seconds after which an extinguish attempt fails."""

    @standoff.validator
    def _check_standoff(self, attribute, value):
        if value >= self.attack_range:
            raise ValueError("standoff must be smaller than attack_range.")


class FireKind(str, Enum):
    INDOOR = "indoor"
    FACADE = "facade"
    OUTDOOR = "outdoor"

    def engageable_by(self, platform: Platform) -> bool:
        if platform is Platform.UGV:
            return self is FireKind.INDOOR
        return self is not FireKind.INDOOR


def _waypoints(value) -> Tuple[np.ndarray, ...]:
    return tuple(to_vec3(w) for w in value)


@frozen(kw_only=True, eq=False)
class RobotSpec:
    id: str
    platform: Platform = field(converter=Platform)
    priority: int = field(default=0, validator=Number(gte=0))
    start: np.ndarray = field(converter=to_vec3)
    yaw: float = field(default=0.0, converter=float)
    home: Optional[np.ndarray] = field(default=None, converter=optional_vec3)
    cruise_altitude: float = field(default=2.0, converter=float, validator=Number(gt=0))
    max_speed: Optional[float] = field(default=None)
    waypoints: Tuple[np.ndarray, ...] = field(default=(), converter=_waypoints)
    tree: Optional[str] = None
    """Behavior tree file, relative to the scenario file."""

    mission_timeout: Optional[float] = None
    """Seconds; defaults to three quarters of the scenario duration."""

    search_laps: int = field(default=3, validator=Number(gte=1))
    """Laps over ``waypoints`` before the generated mission gives up looking for a fire."""

    @property
    def home_position(self) -> np.ndarray:
        return self.start if self.home is None else self.home

    @property
    def speed(self) -> float:
        if self.max_speed is not None:
            return float(self.max_speed)
        return UGV_MAX_SPEED if self.platform is Platform.UGV else 1.5


@frozen(kw_only=True, eq=False)
class FireSpec:
    id: str
    position: np.ndarray = field(converter=to_vec3)
    temperature: float = field(default=600.0, converter=float, validator=Number(gt=100))
    radius: float = field(default=0.3, converter=float, validator=Number(gt=0))
    kind: FireKind = field(converter=FireKind)


@frozen(kw_only=True, eq=False)
class ObstacleSpec:
    """Box present in the world but missing from the robots' map."""

    id: str
    lower: np.ndarray = field(converter=to_vec3)
    upper: np.ndarray = field(converter=to_vec3)


@frozen(kw_only=True, eq=False)
class Scenario:
    sim: SimConfig = field(factory=SimConfig)
    map: MapParams = field(factory=MapParams)
    building: Optional[BuildingParams] = field(factory=BuildingParams)
    map_file: Optional[Path] = None
    sensors: SensorConfig = field(factory=SensorConfig)
    mcl: MclConfig = field(factory=MclConfig)
    planner: PlannerConfig = field(factory=PlannerConfig)
    fire: FireConfig = field(factory=FireConfig)
    extinguish: ExtinguishConfig = field(factory=ExtinguishConfig)
    robots: Tuple[RobotSpec, ...] = field(default=(), converter=tuple)
    """In file order; a robot's position numbers its random streams."""

    fires: Tuple[FireSpec, ...] = field(default=(), converter=lambda f: tuple(sorted(f, key=lambda x: x.id)))
    zones: Tuple[Zone, ...] = field(default=(), converter=lambda z: tuple(sorted(z, key=lambda x: x.id)))
    obstacles: Tuple[ObstacleSpec, ...] = field(default=(), converter=tuple)
    source: Optional[Path] = None

    @property
    def layout(self) -> Optional[BuildingLayout]:
        return None if self.building is None else self.building.layout

    def known_map(self) -> VoxelGrid:
        """Map the robots carry: the building without the unmapped obstacles."""
        if self.map_file is not None:
            return load_map(self.map_file)
        if self.building is None:
            grid = VoxelGrid.empty(self.map.dims, self.map.resolution, self.map.origin)
            occupancy = grid.occupancy.copy()
            occupancy[:, :, 0] = True
            return VoxelGrid(occupancy, resolution=grid.resolution, origin=grid.origin)
        return generate_building(self.building, self.sim.seed, self.map)

    def truth_map(self, known: Optional[VoxelGrid] = None) -> VoxelGrid:
        grid = self.known_map() if known is None else known
        if not self.obstacles:
            return grid
        occupancy = grid.occupancy.copy()
        for ob in self.obstacles:
            lo = np.floor(grid.to_grid(ob.lower) + 1e-9).astype(int)
            hi = np.ceil(grid.to_grid(ob.upper) - 1e-9).astype(int)
            lo = np.clip(lo, 0, grid.dims)
            hi = np.clip(hi, 0, grid.dims)
            occupancy[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]] = True
        return VoxelGrid(occupancy, resolution=grid.resolution, origin=grid.origin)

    def mission_tree(self, robot: RobotSpec) -> BtNode:
        if robot.tree is not None:
            return load_tree_file(_resolve(robot.tree, self.source))
        timeout = robot.mission_timeout if robot.mission_timeout is not None else 0.75 * self.sim.duration
        return build_fire_mission_tree(
            robot.platform,
            robot.waypoints,
            robot.home_position,
            cruise_altitude=robot.cruise_altitude,
            timeout_ticks=max(1, int(round(timeout * self.sim.tick_rate))),
            attempts=robot.search_laps,
        )

    def validate(self) -> None:
        """Pre-flight checks that need the maps or the trees.

        Raises
        ------
        ScenarioError
        """
        if not self.robots:
            raise ScenarioError(msg="A scenario needs at least one robot.", source=self.source)
        try:
            known = self.known_map()
        except BuildingError as e:
            raise ScenarioError(msg=str(e), source=self.source) from None
        truth = self.truth_map(known)

        seen_priorities: Dict[int, str] = {}
        for robot in self.robots:
            if robot.platform is Platform.UGV and robot.speed > UGV_MAX_SPEED + 1e-9:
                raise ScenarioError(
                    msg=f'Robot "{robot.id}": ground robots are limited to {UGV_MAX_SPEED} m/s.', source=self.source
                )
            if robot.platform is Platform.UAV:
                if robot.priority in seen_priorities:
                    other = seen_priorities[robot.priority]
                    raise ScenarioError(
                        msg=f'UAVs "{other}" and "{robot.id}" share priority {robot.priority}.', source=self.source
                    )
                seen_priorities[robot.priority] = robot.id
            for name, point in (("start", robot.start), ("home", robot.home_position)):
                if not truth.is_free(point):
                    raise ScenarioError(
                        msg=f'Robot "{robot.id}": {name} is occupied or off the map.', source=self.source
                    )
            if robot.tree is None and not robot.waypoints:
                raise ScenarioError(msg=f'Robot "{robot.id}" needs waypoints or a tree file.', source=self.source)
            try:
                tree = self.mission_tree(robot)
            except (OSError, TreeParseError) as e:
                raise ScenarioError(msg=f'Robot "{robot.id}": {e}', source=self.source) from None
            _check_tasks(tree, robot.id, self.source)

        layout = self.layout
        for fire in self.fires:
            if not known.contains(fire.position):
                raise ScenarioError(msg=f'Fire "{fire.id}" is off the map.', source=self.source)
            if layout is not None and (fire.kind is FireKind.INDOOR) != layout.interior(fire.position):
                raise ScenarioError(
                    msg=f'Fire "{fire.id}" is declared {fire.kind.value} but lies on the other side of the walls.',
                    source=self.source,
                )


def _check_tasks(tree: BtNode, robot: str, source) -> None:
    stack = [tree]
    while stack:
        node = stack.pop()
        if node.kind is NodeKind.LEAF and node.task_id not in MISSION_TASKS:
            raise ScenarioError(msg=f'Robot "{robot}": unknown task "{node.task_id}".', source=source)
        stack.extend(node.children)


def _resolve(name: Union[str, Path], source: Optional[Path]) -> Path:
    path = Path(name)
    if path.is_absolute():
        return path
    if source is not None and (source.parent / path).exists():
        return source.parent / path
    if (SCENARIO_DIR / path).exists():
        return SCENARIO_DIR / path
    return path


def bundled_scenario(name: str) -> Path:
    """Path of a scenario shipped with the package, e.g. ``"canonical_mission"``."""
    path = SCENARIO_DIR / (name if name.endswith(".toml") else f"{name}.toml")
    if not path.exists():
        available = sorted(p.stem for p in SCENARIO_DIR.glob("*.toml"))
        raise ScenarioError(msg=f'No bundled scenario "{name}"; available: {", ".join(available)}.')
    return path


def _make(factory: Callable[..., T], where: str, source, /, **kwargs) -> T:
    try:
        return factory(**kwargs)
    except EmberError:
        raise
    except (TypeError, ValueError) as e:
        raise ScenarioError(msg=f"[{where}] {e}", source=source) from None


def _sensors(body: Mapping[str, Any], source) -> SensorConfig:
    b = dict(body)
    lidar: Dict[str, Any] = {}
    for key, name in (("lidar_rows", "rows"), ("lidar_cols", "cols"), ("lidar_range", "max_range")):
        if key in b:
            lidar[name] = b.pop(key)
    if "lidar_min_range" in b:
        lidar["min_range"] = b.pop("lidar_min_range")
    if "lidar_fov_deg" in b:
        lidar["vertical_fov"] = math.radians(b.pop("lidar_fov_deg"))
    camera: Dict[str, Any] = {"tilt": math.radians(b.pop("camera_tilt_deg", 10.0))}
    for key, name in (("thermal_width", "width"), ("thermal_height", "height"), ("thermal_focal", "focal")):
        if key in b:
            camera[name] = b.pop(key)
    return _make(
        SensorConfig,
        "sensors",
        source,
        lidar=_make(BeamPattern, "sensors", source, **lidar),
        camera=_make(CameraModel, "sensors", source, **camera),
        **b,
    )


def _fire(body: Mapping[str, Any], source) -> Tuple[FireConfig, ExtinguishConfig]:
    b = dict(body)
    ext = {k: b.pop(k) for k in ("attack_range", "dwell", "standoff", "give_up") if k in b}
    if "aim_tolerance_deg" in b:
        ext["aim_tolerance"] = math.radians(b.pop("aim_tolerance_deg"))
    for key, name in (("angular_window_deg", "angular_window"), ("bearing_sigma_deg", "bearing_sigma")):
        if key in b:
            b[name] = math.radians(b.pop(key))
    return _make(FireConfig, "fire", source, **b), _make(ExtinguishConfig, "fire", source, **ext)


def _table(config: Mapping[str, Any], name: str, cls: Type[T], source, keep_order: bool = False) -> Tuple[T, ...]:
    items = config.get(name, {}).items()
    return tuple(
        _make(cls, f"{name}.{key}", source, id=key, **entry) for key, entry in (items if keep_order else sorted(items))
    )


def scenario_from_dict(config: Mapping[str, Any], source: Optional[Path] = None) -> Scenario:
    """Build (but do not validate) a scenario from an already schema-checked mapping."""
    sim = _make(SimConfig, "sim", source, **config.get("sim", {}))

    map_body = dict(config.get("map", {}))
    map_file = map_body.pop("file", None)
    map_params = _make(MapParams, "map", source, **map_body)

    building_body = dict(config.get("building", {}))
    building: Optional[BuildingParams] = None
    if building_body.pop("enabled", True) and map_file is None:
        openings = tuple(
            _make(Opening, f"openings.{key}", source, **entry)
            for key, entry in sorted(config.get("openings", {}).items())
        )
        building = _make(BuildingParams, "building", source, openings=openings, **building_body)

    mcl_body = dict(config.get("mcl", {}))
    if "init_spread" in mcl_body:
        mcl_body["init_spread"] = tuple(mcl_body["init_spread"])
    mcl = _make(MclConfig, "mcl", source, **mcl_body)
    fire, extinguish = _fire(config.get("fire", {}), source)

    zones = tuple(
        _make(Zone, f"zones.{key}", source, id=key, **entry) for key, entry in sorted(config.get("zones", {}).items())
    )
    return _make(
        Scenario,
        "scenario",
        source,
        sim=sim,
        map=map_params,
        building=building,
        map_file=None if map_file is None else _resolve(map_file, source),
        sensors=_sensors(config.get("sensors", {}), source),
        mcl=mcl,
        planner=_make(PlannerConfig, "planner", source, **config.get("planner", {})),
        fire=fire,
        extinguish=extinguish,
        robots=_table(config, "robots", RobotSpec, source, keep_order=True),
        fires=_table(config, "fires", FireSpec, source),
        zones=zones,
        obstacles=_table(config, "obstacles", ObstacleSpec, source),
        source=source,
    )


def load_scenario(path: Union[str, Path], env: Optional[Env] = None, validate: bool = True) -> Scenario:
    """Read, schema-check, environment-override and validate a scenario file.

    Parameters
    ----------
    path: Union[str, Path]
        Scenario file, or the name of a bundled scenario.
    env: Optional[Env]
        Environment override source; defaults to ``Env("EMBER_")`` over ``os.environ``.
    validate: bool
        Run :meth:`Scenario.validate`.

    Raises
    ------
    UnknownKeyError
        A section or key outside of :data:`SCENARIO_SCHEMA`.
    ScenarioError
        Any other invalid content.
    """
    path = Path(path)
    if not path.exists() and path.suffix == "" and path.parent == Path("."):
        path = bundled_scenario(path.name)
    config = Toml(path, schema=SCENARIO_SCHEMA, must_exist=True).config
    config = (Env() if env is None else env)(config, SCENARIO_SCHEMA)
    scenario = scenario_from_dict(config, source=path)
    if validate:
        scenario.validate()
    logger.info("Loaded scenario %s from %s", scenario.sim.name, path)
    return scenario
