import numpy as np
import pytest

from ember.coordination import Area, AreaKind, RobotInfo, ZoneRegistry, assign_tasks
from ember.fire_estimation import FireTracker, RangeAssociation, RangeSource, make_measurement
from ember.sim import BuildingParams
from ember.sim._fleet import Fleet

ROBOTS = [RobotInfo("ugv", "ugv", 0), RobotInfo("uav1", "uav", 1), RobotInfo("uav2", "uav", 2)]


def _measure(origin, direction, rng_m, variance=0.01):
    return make_measurement(origin, direction, RangeAssociation(rng_m, RangeSource.LIDAR, variance), 0.01)


@pytest.fixture
def fleet():
    registry = ZoneRegistry([])
    for r in ROBOTS:
        registry.register(r)
    return Fleet(
        registry,
        assign_tasks(2, ROBOTS),
        FireTracker(gate=3.0),
        layout=BuildingParams(floors=2).layout,
        min_measurements=3,
    )


def _observe(fleet, origin, direction, rng_m, times=3, inside=True):
    fids = {fleet.report(_measure(origin, direction, rng_m), tick, inside) for tick in range(times)}
    assert len(fids) == 1
    return fids.pop()


def test_confirmation_needs_measurements(fleet):
    fleet.report(_measure((13, 16, 1), (1, 0, 0), 3.0), 0, True)
    assert fleet.confirmed() == []
    fid = _observe(fleet, (13, 16, 1), (1, 0, 0), 3.0, times=2)
    assert fleet.confirmed() == [fid]
    np.testing.assert_allclose(fleet.estimate(fid), [16, 16, 1], atol=1e-6)
    assert fleet.votes[fid] == [3, 0]


def test_area_from_estimate(fleet):
    fid = _observe(fleet, (13, 16, 1), (1, 0, 0), 3.0, inside=False)
    assert fleet.area_of(fid) == Area(AreaKind.FLOOR_INDOOR, 0)


@pytest.mark.parametrize("inside, area", [(True, Area("indoor", 0)), (False, Area("facade", 0))])
def test_area_near_wall_follows_observers(fleet, inside, area):
    fid = _observe(fleet, (16, 18, 1), (0, 1, 0), 2.8, inside=inside)
    assert fleet.area_of(fid) == area


def test_area_without_building(fleet):
    fleet.layout = None
    fid = _observe(fleet, (13, 16, 1), (1, 0, 0), 3.0)
    assert fleet.area_of(fid) == Area(AreaKind.OUTDOOR)
    assert fleet.area_of("fire-99") is None


def test_claimable_respects_allocation(fleet):
    fid = _observe(fleet, (13, 16, 1), (1, 0, 0), 3.0)
    assert fleet.claimable("ugv", (16, 6, 0.5)) == fid
    assert fleet.claimable("uav1", (16, 6, 0.5)) is None
    assert fleet.claimable("uav2", (16, 6, 0.5)) is None


def test_claimable_nearest_first(fleet):
    far = _observe(fleet, (13, 19, 1), (1, 0, 0), 3.0)
    near = _observe(fleet, (13, 13, 1), (1, 0, 0), 3.0)
    assert far != near
    assert fleet.claimable("ugv", (16, 12, 0.5)) == near
    assert fleet.claimable("ugv", (16, 20, 0.5)) == far


def test_claims_and_handled(fleet):
    fid = _observe(fleet, (13, 16, 1), (1, 0, 0), 3.0)
    fleet.claim(fid, "someone")
    assert fleet.claimable("ugv", (16, 6, 0.5)) is None
    fleet.claim(fid, "ugv")
    assert fleet.claimable("ugv", (16, 6, 0.5)) == fid
    fleet.mark_handled(fid)
    assert fid not in fleet.claims
    assert fleet.claimable("ugv", (16, 6, 0.5)) is None


def test_consolidate_follows_merges(fleet):
    fid = _observe(fleet, (13, 16, 1), (1, 0, 0), 3.0)
    fleet.tracker.beliefs["fire-9"] = fleet.tracker.beliefs[fid]
    fleet.votes["fire-9"] = [0, 2]
    fleet.claims["fire-9"] = "ugv"
    fleet.handled.add("fire-9")

    fleet.consolidate()
    assert list(fleet.tracker.beliefs) == [fid]
    assert fleet.aliases == {"fire-9": fid}
    assert fleet.resolve("fire-9") == fid
    assert fleet.votes[fid] == [3, 2]
    assert fleet.claims == {fid: "ugv"}
    assert fid in fleet.handled


def test_resolve_unknown(fleet):
    assert fleet.resolve(None) is None
    assert fleet.resolve("fire-3") is None
