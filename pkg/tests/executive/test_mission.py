import pytest

from ember.executive import (
    MISSION_TASKS,
    Executive,
    NodeKind,
    Status,
    TaskRuntime,
    build_fire_mission_tree,
    dump_tree,
    load_tree,
    load_tree_file,
)
from ember.mcl import Platform
from ember.sim import bundled_scenario, load_scenario
from ember.world_model import Pose

WAYPOINTS = [(16.0, 9.0, 0.5), (16.0, 13.0, 0.5), (16.0, 17.5, 0.5)]


def _leaf_ids(node):
    if node.kind is NodeKind.LEAF:
        return [node.task_id]
    return [t for child in node.children for t in _leaf_ids(child)]


def test_ugv_tree_shape():
    tree = build_fire_mission_tree("ugv", WAYPOINTS, (16, 6, 0.5), timeout_ticks=1800)
    assert tree.kind is NodeKind.SEQUENCE
    body, home = tree.children
    assert body.kind is NodeKind.FORCE_SUCCESS
    assert body.children[0].kind is NodeKind.TIMEOUT
    assert body.children[0].count == 1800
    laps = body.children[0].children[0]
    assert laps.kind is NodeKind.RETRY
    assert laps.count == 3
    assert home.args == ("navigate_home", (16.0, 6.0, 0.5))
    leaves = ["explore", "detect_fire", "fire_confirmed", "approach_fire", "extinguish", "navigate_home"]
    assert _leaf_ids(tree) == leaves
    explore = laps.children[0].children[0].children[0]
    assert explore.args[1:] == tuple(WAYPOINTS)


def test_uav_tree_shape():
    tree = build_fire_mission_tree(Platform.UAV, [(10, 27, 2)], Pose(4, 28, 0.3), cruise_altitude=2.0)
    ids = _leaf_ids(tree)
    assert ids[0] == "takeoff"
    assert ids[-2:] == ["navigate_home", "land"]
    assert tree.children[0].args == ("takeoff", (4.0, 28.0, 2.0))
    assert tree.children[2].args == ("navigate_home", (4.0, 28.0, 2.0))
    assert tree.children[3].args == ("land", (4.0, 28.0, 0.3))


def test_mission_uses_known_tasks():
    tree = build_fire_mission_tree("uav", [(1, 1, 1)], (0, 0, 0))
    assert set(_leaf_ids(tree)) <= set(MISSION_TASKS)


def test_mission_needs_waypoints():
    with pytest.raises(ValueError):
        build_fire_mission_tree("ugv", [], (0, 0, 0))


def test_mission_round_trips_through_text():
    tree = build_fire_mission_tree("uav", WAYPOINTS, (1, 2, 0), cruise_altitude=3.0, timeout_ticks=50)
    assert load_tree(dump_tree(tree)) == tree


def test_bundled_ugv_tree_matches_builder():
    path = bundled_scenario("canonical_mission").parent / "ugv_mission.bt"
    expected = build_fire_mission_tree("ugv", WAYPOINTS, (16.0, 6.0, 0.5), timeout_ticks=1800)
    assert load_tree_file(path) == expected


def test_scenario_mission_trees():
    scenario = load_scenario("canonical_mission")
    trees = {spec.id: scenario.mission_tree(spec) for spec in scenario.robots}
    assert trees["ugv"] == load_tree_file(bundled_scenario("canonical_mission").parent / "ugv_mission.bt")
    assert _leaf_ids(trees["uav1"])[0] == "takeoff"
    assert trees["uav1"].children[0].args[1] == (4.0, 28.0, 2.0)


class _Step:
    def __init__(self, statuses):
        self.statuses = iter(statuses)

    def start(self, blackboard):
        pass

    def update(self, blackboard):
        return next(self.statuses)

    def halt(self, blackboard):
        pass


def _mission_runtime(script):
    """Each leaf id pops its next task's status list from ``script``."""
    runtime = TaskRuntime()
    for task_id, runs in script.items():
        queue = iter(runs)
        runtime.register(task_id, lambda node, queue=queue: _Step(next(queue)))
    return runtime


def test_lap_without_claim_starts_another_lap():
    tree = build_fire_mission_tree("ugv", WAYPOINTS, (16, 6, 0.5), timeout_ticks=100, attempts=2)
    runtime = _mission_runtime(
        {
            "explore": [[Status.SUCCESS], [Status.RUNNING, Status.RUNNING]],
            "detect_fire": [[Status.RUNNING], [Status.RUNNING, Status.SUCCESS]],
            "fire_confirmed": [[Status.FAILURE], [Status.SUCCESS]],
            "approach_fire": [[Status.SUCCESS]],
            "extinguish": [[Status.SUCCESS]],
            "navigate_home": [[Status.SUCCESS]],
        }
    )
    executive = Executive(tree, runtime)

    assert executive.tick() is Status.RUNNING
    assert executive.tick() is Status.SUCCESS
    starts = {h.task_id: h.starts for h in runtime.handles.values()}
    assert starts["explore"] == 2
    assert starts["extinguish"] == 1


def test_mission_gives_up_after_its_laps():
    tree = build_fire_mission_tree("ugv", WAYPOINTS, (16, 6, 0.5), timeout_ticks=100, attempts=2)
    runtime = _mission_runtime(
        {
            "explore": [[Status.SUCCESS], [Status.SUCCESS]],
            "detect_fire": [[Status.RUNNING], [Status.RUNNING]],
            "fire_confirmed": [[Status.FAILURE], [Status.FAILURE]],
            "navigate_home": [[Status.SUCCESS]],
        }
    )
    executive = Executive(tree, runtime)

    assert executive.tick() is Status.SUCCESS
    starts = {h.task_id: h.starts for h in runtime.handles.values()}
    assert starts["explore"] == 2
    assert "approach_fire" not in starts


def test_scenario_search_laps():
    scenario = load_scenario("localization_loop")
    (spec,) = scenario.robots
    assert spec.search_laps == 1
    body = scenario.mission_tree(spec).children[1]
    assert body.children[0].children[0].count == 1
