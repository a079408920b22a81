__all__ = [
    "BeamPattern",
    "Body",
    "BuildingLayout",
    "BuildingParams",
    "ExtinguishConfig",
    "Face",
    "FireKind",
    "FireOutcome",
    "FireSpec",
    "FireState",
    "MapParams",
    "ObstacleSpec",
    "Opening",
    "OpeningKind",
    "PlannerConfig",
    "RobotReport",
    "RobotSpec",
    "RunLog",
    "RunReport",
    "SCENARIO_SCHEMA",
    "Scenario",
    "SensorConfig",
    "SimConfig",
    "World",
    "bundled_scenario",
    "compute_report",
    "generate_building",
    "generate_random_map",
    "load_scenario",
    "run",
    "scenario_from_dict",
    "stream",
    "synth_altimeter",
    "synth_gps",
    "synth_imu",
    "synth_lidar",
    "synth_odometry",
    "synth_thermal",
    "write_report",
]

from ember.sim._building import (
    BuildingLayout,
    BuildingParams,
    Face,
    MapParams,
    Opening,
    OpeningKind,
    generate_building,
    generate_random_map,
)
from ember.sim._logs import RunLog
from ember.sim._report import FireOutcome, RobotReport, RunReport, compute_report, write_report
from ember.sim._run import run
from ember.sim._scenario import (
    SCENARIO_SCHEMA,
    ExtinguishConfig,
    FireKind,
    FireSpec,
    ObstacleSpec,
    PlannerConfig,
    RobotSpec,
    Scenario,
    SimConfig,
    bundled_scenario,
    load_scenario,
    scenario_from_dict,
)
from ember.sim._sensors import (
    BeamPattern,
    SensorConfig,
    synth_altimeter,
    synth_gps,
    synth_imu,
    synth_lidar,
    synth_odometry,
    synth_thermal,
)
from ember.sim._world import Body, FireState, World, stream
