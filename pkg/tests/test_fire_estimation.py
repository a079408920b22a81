import json
import math
from collections import deque

import numpy as np
import pytest

from ember.exceptions import SingularCovarianceError
from ember.fire_estimation import (
    CameraModel,
    FireBelief,
    FireConfig,
    FireDetection,
    FireMeasurement,
    FireTracker,
    RangeAssociation,
    RangeSource,
    ThermalImage,
    associate_range,
    fire_record,
    if_update,
    make_measurement,
    merge_beliefs,
    pixel_to_ray,
    project_point,
    segment_fire,
    write_fire_report,
)
from ember.world_model import Pose, VoxelGrid

BEARING = math.radians(1.0)


def _image(temperatures, pose=None, camera=None):
    return ThermalImage(temperatures=temperatures, camera=camera or CameraModel(), pose=pose or Pose())


def _measure(origin, direction, rng_m, variance, robot=""):
    association = RangeAssociation(rng_m, RangeSource.LIDAR, variance)
    return make_measurement(origin, direction, association, BEARING, robot=robot)


def _components(mask):
    """Flood-fill 8-connected components; returns (centroid_u, centroid_v, size) in scan order."""
    seen = np.zeros_like(mask)
    out = []
    h, w = mask.shape
    for v0 in range(h):
        for u0 in range(w):
            if not mask[v0, u0] or seen[v0, u0]:
                continue
            queue = deque([(v0, u0)])
            seen[v0, u0] = True
            pixels = []
            while queue:
                v, u = queue.popleft()
                pixels.append((v, u))
                for dv in (-1, 0, 1):
                    for du in (-1, 0, 1):
                        nv, nu = v + dv, u + du
                        if 0 <= nv < h and 0 <= nu < w and mask[nv, nu] and not seen[nv, nu]:
                            seen[nv, nu] = True
                            queue.append((nv, nu))
            vs, us = zip(*pixels)
            out.append((float(np.mean(us)), float(np.mean(vs)), len(pixels)))
    return out


################
# Segmentation #
################


def test_segment_fire_uniform():
    assert segment_fire(_image(np.full((120, 160), 20.0)), threshold=100.0) == []


def test_segment_fire_single_block():
    temperatures = np.full((120, 160), 20.0)
    temperatures[8:13, 8:13] = 300.0
    detections = segment_fire(_image(temperatures))
    assert detections == [FireDetection((10.0, 10.0), 25, 300.0)]


def test_segment_fire_two_blobs_match_flood_fill():
    temperatures = np.full((60, 80), 20.0)
    temperatures[5:9, 10:20] = 250.0
    temperatures[9, 19] = 250.0
    temperatures[30:40, 50:53] = 180.0
    temperatures[40, 53] = 180.0
    detections = segment_fire(_image(temperatures), threshold=100.0, min_pixels=1)
    oracle = _components(temperatures >= 100.0)
    assert len(detections) == 2
    for det, (u, v, n) in zip(detections, oracle):
        assert det.centroid == pytest.approx((u, v))
        assert det.pixel_count == n


def test_segment_fire_min_pixels():
    temperatures = np.full((20, 20), 20.0)
    temperatures[2:4, 2:4] = 200.0
    temperatures[10, 10] = 200.0
    detections = segment_fire(_image(temperatures), min_pixels=4)
    assert [d.pixel_count for d in detections] == [4]


def test_segment_fire_threshold_monotone(rng):
    temperatures = rng.uniform(20, 330, size=(40, 40))
    previous = None
    for threshold in (100.0, 150.0, 200.0, 250.0, 300.0):
        mask = temperatures >= threshold
        if previous is not None:
            assert not np.any(mask & ~previous)
        previous = mask
        total = sum(d.pixel_count for d in segment_fire(_image(temperatures), threshold, min_pixels=1))
        assert total == int(mask.sum())


def test_segment_fire_threshold_out_of_sensor_range():
    with pytest.raises(ValueError):
        segment_fire(_image(np.zeros((4, 4))), threshold=400.0)


def test_thermal_image_clipped_to_sensor_range():
    img = _image(np.array([[-100.0, 500.0]]))
    np.testing.assert_array_equal(img.temperatures, [[-40.0, 330.0]])


############
# Geometry #
############


def test_pixel_to_ray_principal_point():
    img = _image(np.zeros((120, 160)))
    origin, direction = pixel_to_ray(FireDetection((80.0, 60.0), 1, 0.0), img)
    np.testing.assert_array_equal(origin, [0.0, 0.0, 0.0])
    np.testing.assert_allclose(direction, [1.0, 0.0, 0.0], atol=1e-12)


def test_pixel_to_ray_offset_pixel():
    img = _image(np.zeros((120, 160)))
    _, direction = pixel_to_ray(FireDetection((80.0 + 120.0, 60.0), 1, 0.0), img)
    np.testing.assert_allclose(direction, [1 / math.sqrt(2), -1 / math.sqrt(2), 0.0], atol=1e-9)
    _, direction = pixel_to_ray(FireDetection((80.0, 60.0 - 60.0), 1, 0.0), img)
    np.testing.assert_allclose(direction, np.array([1.0, 0.0, 0.5]) / math.sqrt(1.25), atol=1e-9)


def test_camera_tilt_looks_down():
    camera = CameraModel(tilt=math.radians(30.0))
    pose = camera.camera_pose(Pose(z=2.0))
    img = _image(np.zeros((120, 160)), pose=pose, camera=camera)
    _, direction = pixel_to_ray(FireDetection(camera.principal_point, 1, 0.0), img)
    assert math.degrees(math.atan2(-direction[2], direction[0])) == pytest.approx(30.0)


def test_project_round_trip(rng):
    camera = CameraModel()
    for _ in range(20):
        x, y, z = rng.uniform(-5, 5, 3)
        pose = Pose(x, y, z, roll=rng.uniform(-0.2, 0.2), pitch=rng.uniform(-0.3, 0.3), yaw=rng.uniform(-3, 3))
        img = _image(np.zeros((120, 160)), pose=pose, camera=camera)
        forward = img.map_from_camera()[:, 2]
        lateral = img.map_from_camera()[:, 0] * rng.uniform(-3, 3)
        point = pose.position + 10.0 * forward + lateral
        u, v, _ = project_point(point, img)
        origin, direction = pixel_to_ray(FireDetection((u, v), 1, 0.0), img)
        rel = point - origin
        miss = np.linalg.norm(rel - (rel @ direction) * direction)
        assert miss < 1e-6


def test_project_point_behind_camera():
    assert project_point((-5.0, 0.0, 0.0), _image(np.zeros((120, 160)))) is None


#####################
# Range association #
#####################


@pytest.fixture
def wall_12m():
    occupancy = np.zeros((30, 4, 4), dtype=bool)
    occupancy[24, :, :] = True
    return VoxelGrid(occupancy, resolution=0.5, origin=(0.0, -1.0, -1.0))


def test_associate_range_lidar_point(wall_12m):
    result = associate_range((0, 0, 0), (1, 0, 0), [[7.0, 0.0, 0.0]], math.radians(1.5), wall_12m, 25.0, 0.1, 5.0)
    assert result == RangeAssociation(7.0, RangeSource.LIDAR, 0.1**2 * (7.0 / 5.0) ** 2)


def test_associate_range_map_fallback(wall_12m):
    result = associate_range((0, 0, 0), (1, 0, 0), np.zeros((0, 3)), math.radians(1.5), wall_12m, 25.0, 0.1, 5.0, 2.0)
    assert result.source is RangeSource.MAP_FALLBACK
    assert result.range == pytest.approx(12.0, abs=0.5)
    assert result.variance == 4.0
    assert result.variance >= 100 * 0.1**2


def test_associate_range_fallback_miss(empty_grid):
    result = associate_range((0.5, 0.5, 0.5), (0, 1, 0), [[0.5, 0.5, 5.0]], 0.01, empty_grid, 8.0)
    assert result == RangeAssociation(8.0, RangeSource.MAP_FALLBACK, 4.0)


def test_associate_range_median(rng, wall_12m):
    along = rng.normal(9.0, 0.2, size=41)
    lateral = rng.normal(0.0, 0.03, size=(41, 2))
    cloud = np.column_stack([along, lateral])
    outside = [[5.0, 3.0, 0.0], [-4.0, 0.0, 0.0]]
    result = associate_range((0, 0, 0), (1, 0, 0), np.vstack([cloud, outside]), math.radians(1.5), wall_12m, 25.0)
    window = np.degrees(np.arctan2(np.linalg.norm(lateral, axis=1), along)) <= 1.5
    assert result.source is RangeSource.LIDAR
    assert result.range == pytest.approx(float(np.sort(along[window])[window.sum() // 2]))


def test_fire_config_fallback_must_dominate():
    with pytest.raises(ValueError):
        FireConfig(sigma_lidar=0.5, sigma_fallback=1.0)


######################
# Information filter #
######################


def test_if_update_single_measurement():
    m = _measure((1.0, 2.0, 0.5), (0.0, 1.0, 0.0), 6.0, 0.09)
    belief = if_update(FireBelief(), m, tick=4)
    np.testing.assert_allclose(belief.estimate(), [1.0, 8.0, 0.5], atol=1e-9)
    assert belief.measurement_count == 1
    assert belief.last_update_tick == 4


def test_if_update_trace_increases():
    belief = FireBelief()
    for i in range(5):
        previous = np.trace(belief.Y)
        belief = if_update(belief, _measure((0, 0, 0), (math.cos(i), math.sin(i), 0.0), 5.0, 0.1))
        assert np.trace(belief.Y) > previous


def test_if_update_perpendicular_views():
    truth = np.array([10.0, 0.0, 1.0])
    # Large ray-aligned variance on both views; the first overestimates its range by 1.5 m.
    a = _measure((0.0, 0.0, 1.0), (1.0, 0.0, 0.0), 11.5, 4.0)
    b = _measure((10.0, -10.0, 1.0), (0.0, 1.0, 0.0), 10.0, 4.0)
    fused = if_update(if_update(FireBelief(), a), b)
    assert np.linalg.norm(fused.estimate() - truth) < 0.1
    single_a = np.trace(if_update(FireBelief(), a).covariance())
    single_b = np.trace(if_update(FireBelief(), b).covariance())
    assert np.trace(fused.covariance()) < min(single_a, single_b)


def test_if_update_two_views_at_ten_meters(rng):
    cfg = FireConfig()
    truth = np.array([10.0, 10.0, 1.5])
    occupancy = np.zeros((40, 40, 8), dtype=bool)
    grid = VoxelGrid(occupancy, resolution=0.5)
    belief = FireBelief()
    for origin in ((0.0, 10.0, 1.5), (10.0, 0.0, 1.5)):
        origin = np.array(origin)
        direction = (truth - origin) / np.linalg.norm(truth - origin)
        cloud = truth + rng.normal(0.0, cfg.sigma_lidar, size=(5, 3)) * [1, 1, 0.1]
        association = associate_range(origin, direction, cloud, math.radians(3.0), grid, cfg.max_range)
        assert association.source is RangeSource.LIDAR
        belief = if_update(belief, make_measurement(origin, direction, association, cfg.bearing_sigma))
    assert np.linalg.norm(belief.estimate() - truth) < 0.3


def test_if_update_identical_measurements_scale_trace():
    m = _measure((0.0, 0.0, 0.0), (0.6, 0.8, 0.0), 10.0, 0.16)
    single = np.trace(if_update(FireBelief(), m).covariance())
    belief = FireBelief()
    for _ in range(10):
        belief = if_update(belief, m)
    assert np.trace(belief.covariance()) == pytest.approx(single / 10, rel=1e-6)


def test_if_update_twice_equals_half_covariance():
    m = _measure((0.0, 0.0, 0.0), (0.0, 0.0, 1.0), 3.0, 0.5)
    halved = FireMeasurement(
        origin=m.origin,
        direction=m.direction,
        range=m.range,
        range_source=m.range_source,
        covariance=m.covariance / 2,
    )
    twice = if_update(if_update(FireBelief(), m), m)
    once = if_update(FireBelief(), halved)
    np.testing.assert_allclose(twice.Y, once.Y, rtol=1e-12)
    np.testing.assert_allclose(twice.y, once.y, rtol=1e-12)


def test_if_update_position_covariance_widens():
    m = _measure((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), 5.0, 0.1)
    widened = make_measurement(
        m.origin, m.direction, RangeAssociation(5.0, RangeSource.LIDAR, 0.1), BEARING, np.eye(3) * 0.5
    )
    assert np.trace(if_update(FireBelief(), widened).covariance()) > np.trace(if_update(FireBelief(), m).covariance())


def test_if_update_singular():
    m = FireMeasurement(
        origin=(0, 0, 0), direction=(1, 0, 0), range=1.0, range_source="lidar", covariance=np.zeros((3, 3))
    )
    with pytest.raises(SingularCovarianceError):
        if_update(FireBelief(), m)


def test_empty_belief_has_no_estimate():
    assert FireBelief().estimate() is None
    assert FireBelief().covariance() is None


def test_merge_beliefs():
    ms = [_measure((0, 0, 0), (math.cos(a), math.sin(a), 0.0), 4.0 + a, 0.2) for a in (0.1, 0.9, 1.7)]
    a = if_update(if_update(FireBelief(), ms[0], 1), ms[1], 2)
    b = if_update(FireBelief(), ms[2], 3)

    assert merge_beliefs(a, FireBelief()) == a
    assert merge_beliefs(a, b) == merge_beliefs(b, a)

    replay = FireBelief()
    for i, m in enumerate(ms):
        replay = if_update(replay, m, i + 1)
    assert merge_beliefs(a, b) == replay
    assert merge_beliefs(a, b).last_update_tick == 3


###########
# Tracker #
###########


def test_fire_tracker_gates():
    tracker = FireTracker(gate=3.0)
    first = tracker.observe(_measure((0, 0, 1), (1, 0, 0), 10.0, 0.04), 1)
    same = tracker.observe(_measure((10, -10, 1), (0, 1, 0), 10.05, 0.04), 2)
    other = tracker.observe(_measure((0, 0, 1), (0, 1, 0), 10.0, 0.04), 3)
    assert first == same == "fire-1"
    assert other == "fire-2"
    assert tracker.beliefs["fire-1"].measurement_count == 2
    assert list(tracker.confirmed(min_measurements=2)) == ["fire-1"]


def test_fire_tracker_consolidate():
    tracker = FireTracker(gate=3.0)
    m = _measure((0, 0, 1), (1, 0, 0), 10.0, 0.04)
    tracker.beliefs = {"fire-1": if_update(FireBelief(), m), "fire-2": if_update(FireBelief(), m)}
    assert tracker.consolidate() == [("fire-1", "fire-2")]
    assert list(tracker.beliefs) == ["fire-1"]
    assert tracker.beliefs["fire-1"].measurement_count == 2


def test_write_fire_report(tmp_path):
    tracker = FireTracker()
    tracker.observe(_measure((1, 2, 3), (0, 0, 1), 2.0, 0.01), 7)
    file = tmp_path / "fires.jsonl"
    write_fire_report(tracker, file)
    (record,) = [json.loads(line) for line in file.read_text().splitlines()]
    assert record["id"] == "fire-1"
    assert (record["x"], record["y"], record["z"]) == pytest.approx((1.0, 2.0, 5.0))
    assert record["measurement_count"] == 1
    assert record["last_update_tick"] == 7
    assert set(record) == {"id", "measurement_count", "last_update_tick"} | {
        "x", "y", "z", "cov_xx", "cov_xy", "cov_xz", "cov_yy", "cov_yz", "cov_zz"
    }


def test_fire_record_without_estimate():
    record = fire_record("fire-9", FireBelief())
    assert record["x"] is None
    assert record["measurement_count"] == 0
