import math

import numpy as np
import pytest

from ember.config import Env
from ember.exceptions import ScenarioError, UnknownKeyError
from ember.executive import NodeKind
from ember.mcl import Platform
from ember.sim import FireKind, World, bundled_scenario, load_scenario
from ember.world_model import VoxelGrid, save_map

NO_ENV = Env(environ={})

OPEN_FIELD = """\
[sim]
name = "field"
duration = 10.0

[map]
size = [12.0, 12.0, 4.0]
resolution = 0.5

[building]
enabled = false
"""

UAV = """
[robots.uav1]
platform = "uav"
priority = 1
start = [2.0, 2.0, 0.3]
waypoints = [[6.0, 6.0, 1.5]]
"""


def test_load_bundled_canonical_mission():
    scenario = load_scenario("canonical_mission", env=NO_ENV)
    assert scenario.source == bundled_scenario("canonical_mission")
    assert [r.id for r in scenario.robots] == ["ugv", "uav1", "uav2"]
    assert [r.platform for r in scenario.robots] == [Platform.UGV, Platform.UAV, Platform.UAV]
    assert [f.id for f in scenario.fires] == ["facade", "ground_floor", "yard"]
    assert [f.kind for f in scenario.fires] == [FireKind.FACADE, FireKind.INDOOR, FireKind.OUTDOOR]
    assert [z.id for z in scenario.zones] == ["north"]
    assert scenario.building is not None
    assert scenario.building.floors == 2
    assert len(scenario.building.openings) == 3
    assert scenario.sim.n_ticks == 2400
    assert scenario.sim.dt == pytest.approx(0.1)
    assert scenario.extinguish.attack_range == 2.5
    assert scenario.extinguish.aim_tolerance == pytest.approx(math.radians(30))
    assert scenario.mcl.n_particles == 300


def test_load_bundled_localization_loop():
    scenario = load_scenario("localization_loop", env=NO_ENV)
    (uav,) = scenario.robots
    assert len(uav.waypoints) == 5
    assert scenario.planner.uav_coarsen == 1


def test_unknown_bundled_scenario():
    with pytest.raises(ScenarioError) as e:
        load_scenario("no_such_scenario", env=NO_ENV)
    assert "canonical_mission" in str(e.value)


def test_missing_scenario_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_scenario(tmp_path / "missing.toml", env=NO_ENV)


def test_truth_map_adds_unmapped_obstacles():
    scenario = load_scenario("canonical_mission", env=NO_ENV, validate=False)
    known = scenario.known_map()
    truth = scenario.truth_map(known)
    assert known.is_free((16.0, 15.25, 0.5))
    assert truth.is_occupied((16.0, 15.25, 0.5))
    assert truth.n_occupied - known.n_occupied == 4 * 2 * 4


def test_minimal_scenario(write_scenario):
    scenario = load_scenario(write_scenario(OPEN_FIELD + UAV), env=NO_ENV)
    assert scenario.building is None
    grid = scenario.known_map()
    assert grid.dims == (24, 24, 9)
    assert grid.occupancy[:, :, 0].all()
    assert grid.n_occupied == 24 * 24

    (uav,) = scenario.robots
    tree = scenario.mission_tree(uav)
    assert tree.kind is NodeKind.SEQUENCE
    assert tree.children[1].children[0].count == int(0.75 * 10.0 * 10)


def test_robots_keep_file_order(write_scenario):
    robots = """
[robots.zulu]
platform = "uav"
priority = 2
start = [8.0, 8.0, 0.3]
waypoints = [[6.0, 6.0, 1.5]]

[robots.alpha]
platform = "uav"
priority = 1
start = [2.0, 2.0, 0.3]
waypoints = [[6.0, 6.0, 1.5]]
"""
    scenario = load_scenario(write_scenario(OPEN_FIELD + robots), env=NO_ENV)
    assert [r.id for r in scenario.robots] == ["zulu", "alpha"]

    world = World.create(scenario)
    assert world.bodies["zulu"].index == 0
    assert world.bodies["alpha"].index == 1


def test_unknown_key(write_scenario):
    path = write_scenario(OPEN_FIELD + UAV + 'colour = "red"\n')
    with pytest.raises(UnknownKeyError) as e:
        load_scenario(path, env=NO_ENV)
    assert e.value.key == "robots.uav1.colour"


def test_unknown_section(write_scenario):
    with pytest.raises(UnknownKeyError):
        load_scenario(write_scenario(OPEN_FIELD + UAV + "[weather]\nwind = 3.0\n"), env=NO_ENV)


def test_environment_override(write_scenario):
    path = write_scenario(OPEN_FIELD + UAV)
    scenario = load_scenario(path, env=Env(environ={"EMBER_SIM_SEED": "42", "EMBER_MCL_N_PARTICLES": "64"}))
    assert scenario.sim.seed == 42
    assert scenario.mcl.n_particles == 64


def test_environment_override_default(write_scenario, monkeypatch):
    monkeypatch.setenv("EMBER_SIM_DURATION", "20")
    scenario = load_scenario(write_scenario(OPEN_FIELD + UAV))
    assert scenario.sim.duration == 20.0


def test_tree_file_relative_to_scenario(write_scenario):
    write_scenario("Sequence {\n  Leaf(takeoff, [2.0, 2.0, 1.5])\n  Leaf(land, [2.0, 2.0, 0.3])\n}\n", "hop.bt")
    text = OPEN_FIELD + UAV.replace("waypoints = [[6.0, 6.0, 1.5]]", 'tree = "hop.bt"')
    scenario = load_scenario(write_scenario(text), env=NO_ENV)
    assert scenario.mission_tree(scenario.robots[0]).size() == 3


def test_map_file_relative_to_scenario(write_scenario, tmp_path):
    occupancy = np.zeros((8, 8, 4), dtype=bool)
    occupancy[:, :, 0] = True
    occupancy[4, 4, 1:] = True
    grid = VoxelGrid(occupancy, resolution=1.0)
    save_map(grid, tmp_path / "yard.embrmap")
    text = OPEN_FIELD.replace("resolution = 0.5", 'file = "yard.embrmap"') + UAV
    scenario = load_scenario(write_scenario(text), env=NO_ENV, validate=False)
    assert scenario.building is None
    assert scenario.known_map() == grid


@pytest.mark.parametrize(
    "extra, fragment",
    [
        ("", "at least one robot"),
        (
            '[robots.rover]\nplatform = "ugv"\nstart = [2.0, 2.0, 0.3]\nmax_speed = 1.0\nwaypoints = [[4.0, 2.0, 0.3]]\n',
            "limited to 0.7",
        ),
        (UAV + UAV.replace("uav1", "uav2").replace("2.0, 2.0, 0.3", "3.0, 3.0, 0.3"), "share priority 1"),
        (UAV.replace("2.0, 2.0, 0.3", "2.0, 2.0, -0.2"), "start is occupied"),
        (UAV + "home = [2.0, 2.0, 20.0]\n", "home is occupied or off the map"),
        (UAV.replace("waypoints = [[6.0, 6.0, 1.5]]", ""), "needs waypoints or a tree"),
        (UAV + '\n[fires.far]\nposition = [50.0, 2.0, 1.0]\nkind = "outdoor"\n', "off the map"),
        (UAV.replace("waypoints = [[6.0, 6.0, 1.5]]", 'tree = "missing.bt"'), 'Robot "uav1"'),
    ],
)
def test_validation_errors(write_scenario, extra, fragment):
    with pytest.raises(ScenarioError) as e:
        load_scenario(write_scenario(OPEN_FIELD + extra), env=NO_ENV)
    assert fragment in str(e.value)


def test_unknown_task(write_scenario):
    write_scenario("Sequence { Leaf(dance) }", "dance.bt")
    text = OPEN_FIELD + UAV.replace("waypoints = [[6.0, 6.0, 1.5]]", 'tree = "dance.bt"')
    with pytest.raises(ScenarioError) as e:
        load_scenario(write_scenario(text), env=NO_ENV)
    assert 'unknown task "dance"' in str(e.value)


def test_tree_parse_error(write_scenario):
    write_scenario("Sequence {\n  Inverter { Leaf(land) Leaf(land) }\n}", "bad.bt")
    text = OPEN_FIELD + UAV.replace("waypoints = [[6.0, 6.0, 1.5]]", 'tree = "bad.bt"')
    with pytest.raises(ScenarioError) as e:
        load_scenario(write_scenario(text), env=NO_ENV)
    assert "Line 2" in str(e.value)


@pytest.mark.parametrize(
    "text, fragment",
    [
        (OPEN_FIELD.replace("duration = 10.0", "tick_rate = -1.0") + UAV, "[sim]"),
        (OPEN_FIELD + UAV + '\n[planner]\nalgorithm = "dijkstra"\n', "[planner]"),
        (OPEN_FIELD + UAV + "\n[fire]\nstandoff = 3.0\n", "standoff"),
        (OPEN_FIELD + UAV + '\n[robots.x]\nplatform = "boat"\nstart = [1.0, 1.0, 1.0]\n', "[robots.x]"),
    ],
)
def test_invalid_values(write_scenario, text, fragment):
    with pytest.raises(ScenarioError) as e:
        load_scenario(write_scenario(text), env=NO_ENV)
    assert fragment in str(e.value)


def test_fire_kind_must_match_building(write_scenario):
    source = bundled_scenario("canonical_mission")
    text = source.read_text().replace('[16.0, 28.0, 0.2]\nkind = "outdoor"', '[16.0, 28.0, 0.2]\nkind = "indoor"')
    write_scenario(source.with_name("ugv_mission.bt").read_text(), "ugv_mission.bt")
    with pytest.raises(ScenarioError) as e:
        load_scenario(write_scenario(text), env=NO_ENV)
    assert 'Fire "yard"' in str(e.value)


def test_fire_kind_engagement():
    assert FireKind.INDOOR.engageable_by(Platform.UGV)
    assert not FireKind.FACADE.engageable_by(Platform.UGV)
    assert not FireKind.INDOOR.engageable_by(Platform.UAV)
    assert FireKind.OUTDOOR.engageable_by(Platform.UAV)
