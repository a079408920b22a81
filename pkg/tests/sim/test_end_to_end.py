import pytest
from attrs import evolve

from ember.config import Env
from ember.sim import load_scenario, run

NO_ENV = Env(environ={})

pytestmark = pytest.mark.slow


NULL = """\
[sim]
name = "null"
duration = 2.0

[map]
size = [8.0, 8.0, 3.0]
resolution = 0.5

[building]
enabled = false

[sensors]
lidar_sigma = 0.0
gps_sigma = 0.0
imu_sigma = 0.0
yaw_sigma = 0.0
altimeter_sigma = 0.0
odom_noise = 0.0
sway = 0.0

[mcl]
n_particles = 50
init_spread = [0.0, 0.0, 0.0, 0.0]

[robots.uav]
platform = "uav"
priority = 1
start = [2.0, 2.0, 0.3]
tree = "idle.bt"
"""


def _log_bytes(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir()) if p.name != "report.json"}


def test_null_scenario_has_no_error(write_scenario, tmp_path):
    write_scenario("Sequence {\n  Leaf(land, [2.0, 2.0, 0.3])\n}\n", "idle.bt")
    scenario = load_scenario(write_scenario(NULL), env=NO_ENV)
    report = run(scenario, tmp_path / "logs")

    assert report.ticks == 1
    (uav,) = report.robots
    assert uav.mission_status == "SUCCESS"
    assert uav.position_rmse == pytest.approx(0.0, abs=1e-9)
    assert uav.yaw_rmse_deg == pytest.approx(0.0, abs=1e-9)
    assert uav.distance_travelled == 0.0
    assert report.fires == []


def test_canonical_mission(tmp_path):
    scenario = load_scenario("canonical_mission", env=NO_ENV)
    report = run(scenario, tmp_path / "a")

    assert report.all_fires_extinguished
    assert report.coordination_violations == 0
    for fire in report.fires:
        assert fire.extinguished_time < scenario.sim.duration
    assert {f.kind for f in report.fires} == {"indoor", "facade", "outdoor"}

    run(scenario, tmp_path / "b")
    assert _log_bytes(tmp_path / "a") == _log_bytes(tmp_path / "b")


def test_localization_loop_converges(tmp_path):
    base = load_scenario("localization_loop", env=NO_ENV)
    passed = 0
    for seed in range(5):
        scenario = evolve(base, sim=evolve(base.sim, seed=seed))
        (uav,) = run(scenario, tmp_path / str(seed)).robots
        if uav.position_rmse_final < 0.5 and uav.yaw_rmse_final_deg < 5.0:
            passed += 1
    assert passed >= 4
