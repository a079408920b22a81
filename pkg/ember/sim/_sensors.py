"""Sensor synthesis from ground truth.

Every function takes the generator it draws from; the simulator hands each call its own
substream so that results do not depend on call order.
"""

import math
from typing import Iterable, Optional, Tuple

import numpy as np
from attrs import field, frozen

from ember.fire_estimation import CameraModel, ThermalImage, project_point
from ember.mcl import OdomDelta
from ember.sim._building import BuildingLayout
from ember.utils import to_vec3, wrap_angle
from ember.validators import Number
from ember.world_model import Pose, VoxelGrid, raycast, raycast_many

__all__ = [
    "BeamPattern",
    "SensorConfig",
    "synth_altimeter",
    "synth_gps",
    "synth_imu",
    "synth_lidar",
    "synth_odometry",
    "synth_thermal",
]


@frozen(kw_only=True)
class BeamPattern:
    """Rows of beams evenly spread over ``vertical_fov``, columns evenly spread over 360 degrees."""

    rows: int = field(default=8, validator=Number(gte=1))
    cols: int = field(default=32, validator=Number(gte=1))
    vertical_fov: float = field(default=math.radians(60.0), converter=float, validator=Number(gte=0))
    max_range: float = field(default=25.0, converter=float, validator=Number(gt=0))
    min_range: float = field(default=0.2, converter=float, validator=Number(gte=0))

    def directions(self) -> np.ndarray:
        """``(rows * cols, 3)`` unit beam directions in the body frame; a 1x1 pattern looks along +x."""
        if self.rows == 1:
            elevation = np.zeros(1)
        else:
            elevation = np.linspace(-self.vertical_fov / 2, self.vertical_fov / 2, self.rows)
        azimuth = np.arange(self.cols) * (2 * math.pi / self.cols)
        el, az = np.meshgrid(elevation, azimuth, indexing="ij")
        el, az = el.ravel(), az.ravel()
        return np.column_stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])


@frozen(kw_only=True)
class SensorConfig:
    lidar: BeamPattern = field(factory=BeamPattern)
    lidar_sigma: float = field(default=0.02, converter=float, validator=Number(gte=0))
    gps_sigma: float = field(default=0.5, converter=float, validator=Number(gte=0))
    imu_sigma: float = field(default=0.005, converter=float, validator=Number(gte=0))
    """Roll and pitch noise, radians."""

    yaw_sigma: float = field(default=0.01, converter=float, validator=Number(gte=0))
    yaw_bias: float = field(default=0.0, converter=float)
    altimeter_sigma: float = field(default=0.02, converter=float, validator=Number(gte=0))
    odom_noise: float = field(default=0.02, converter=float, validator=Number(gte=0))
    """Odometry noise standard deviation per meter (per radian) of motion."""

    odom_drift: float = field(default=0.0, converter=float)
    """Scale error of odometry translation, e.g. ``0.01`` over-reports by 1 %."""

    camera: CameraModel = field(factory=lambda: CameraModel(tilt=math.radians(10.0)))
    ambient: float = field(default=20.0, converter=float)
    thermal_range: float = field(default=30.0, converter=float, validator=Number(gt=0))
    """Fires farther than this render nothing."""

    sway: float = field(default=0.03, converter=float, validator=Number(gte=0))
    """Amplitude of UAV roll and pitch oscillation, radians."""


def synth_lidar(
    pose: Pose,
    grid: VoxelGrid,
    pattern: BeamPattern,
    sigma: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """One scan in the body frame; misses and returns closer than ``min_range`` are dropped."""
    body = pattern.directions()
    world = pose.rotation().apply(body)
    world /= np.linalg.norm(world, axis=1, keepdims=True)
    origins = np.broadcast_to(pose.position, world.shape)
    ranges = raycast_many(origins, world, pattern.max_range, grid)
    hit = np.isfinite(ranges) & (ranges >= pattern.min_range)
    r = ranges[hit]
    if sigma > 0:
        r = r + rng.normal(0.0, sigma, size=r.shape)
    return body[hit] * r[:, None]


def synth_gps(
    position,
    layout: Optional[BuildingLayout],
    sigma: float,
    rng: np.random.Generator,
) -> Optional[np.ndarray]:
    """Noisy fix, ``None`` inside the building."""
    pos = to_vec3(position)
    if layout is not None and layout.inside(pos):
        return None
    if sigma == 0:
        return pos
    return pos + rng.normal(0.0, sigma, size=3)


def synth_imu(
    pose: Pose,
    sigma: float,
    yaw_sigma: float,
    yaw_bias: float,
    rng: np.random.Generator,
) -> Tuple[float, float, float]:
    noise = rng.normal(0.0, 1.0, size=3)
    roll = pose.roll + sigma * noise[0]
    pitch = pose.pitch + sigma * noise[1]
    yaw = wrap_angle(pose.yaw + yaw_bias + yaw_sigma * noise[2])
    return float(roll), float(pitch), float(yaw)


def synth_altimeter(position, grid: VoxelGrid, sigma: float, rng: np.random.Generator) -> Optional[float]:
    """Height above the first surface straight below, ``None`` when nothing is below."""
    pos = to_vec3(position)
    height = raycast(pos, (0.0, 0.0, -1.0), float(pos[2] - grid.origin[2]) + grid.resolution, grid)
    if height is None:
        return None
    if sigma > 0:
        height += float(rng.normal(0.0, sigma))
    return height


def synth_odometry(
    previous: Pose,
    current: Pose,
    noise: float,
    drift: float,
    rng: np.random.Generator,
) -> OdomDelta:
    """Body-frame increment between two true poses with proportional noise and a scale drift."""
    c, s = math.cos(previous.yaw), math.sin(previous.yaw)
    wx, wy = current.x - previous.x, current.y - previous.y
    dx = c * wx + s * wy
    dy = -s * wx + c * wy
    dz = current.z - previous.z
    dyaw = wrap_angle(current.yaw - previous.yaw)
    true = np.array([dx, dy, dz, dyaw])
    scale = np.array([1.0 + drift, 1.0 + drift, 1.0 + drift, 1.0])
    measured = true * scale
    if noise > 0:
        measured = measured + rng.normal(0.0, 1.0, size=4) * noise * np.abs(true)
    return OdomDelta(dx=measured[0], dy=measured[1], dz=measured[2], dyaw=measured[3])


def synth_thermal(
    pose: Pose,
    camera: CameraModel,
    fires: Iterable,
    grid: VoxelGrid,
    ambient: float = 20.0,
    max_range: float = 30.0,
) -> ThermalImage:
    """Render visible fires as discs with a parabolic temperature profile.

    Each fire (anything with ``position``, ``temperature`` and ``radius``) projects to a disc of
    pixel radius ``focal * radius / depth``. A fire is occluded when the straight line from the
    camera stops at an occupied voxel more than two voxels short of it.
    """
    cam_pose = camera.camera_pose(pose)
    temperatures = np.full((camera.height, camera.width), float(ambient))
    img = ThermalImage(temperatures=temperatures, camera=camera, pose=cam_pose)
    v, u = np.mgrid[0 : camera.height, 0 : camera.width]
    for fire in fires:
        position = to_vec3(fire.position)
        projected = project_point(position, img)
        if projected is None:
            continue
        pu, pv, depth = projected
        rel = position - cam_pose.position
        distance = float(np.linalg.norm(rel))
        if distance > max_range or distance == 0:
            continue
        rho = camera.focal * fire.radius / depth
        if pu < -rho or pu > camera.width + rho or pv < -rho or pv > camera.height + rho:
            continue
        margin = 2 * grid.resolution
        if distance > margin and grid.contains(cam_pose.position):
            hit = raycast(cam_pose.position, rel / distance, distance - margin, grid)
            if hit is not None:
                continue
        d2 = ((u - pu) ** 2 + (v - pv) ** 2) / rho**2
        disc = np.where(d2 < 1.0, ambient + (fire.temperature - ambient) * (1.0 - d2), ambient)
        temperatures = np.maximum(temperatures, disc)
    return ThermalImage(temperatures=temperatures, camera=camera, pose=cam_pose)
