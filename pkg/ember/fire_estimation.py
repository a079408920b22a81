"""Fire detection in thermal images and information-filter triangulation of fire positions."""

import json
import logging
import math
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from attrs import define, field, frozen
from scipy import ndimage

from ember.exceptions import SingularCovarianceError
from ember.utils import to_readonly_array, to_vec3
from ember.validators import Finite, Number, Shape
from ember.world_model import Pose, VoxelGrid, raycast

__all__ = [
    "BODY_FROM_CAMERA",
    "CameraModel",
    "FireBelief",
    "FireConfig",
    "FireDetection",
    "FireMeasurement",
    "FireTracker",
    "RangeAssociation",
    "RangeSource",
    "SENSOR_RANGE_C",
    "ThermalImage",
    "associate_range",
    "fire_record",
    "if_update",
    "make_measurement",
    "merge_beliefs",
    "pixel_to_ray",
    "project_point",
    "segment_fire",
    "write_fire_report",
]

logger = logging.getLogger(__name__)

SENSOR_RANGE_C = (-40.0, 330.0)

# Columns are the camera axes (right, down, forward) expressed in the body frame (forward, left, up).
BODY_FROM_CAMERA = np.array(
    [
        [0.0, 0.0, 1.0],
        [-1.0, 0.0, 0.0],
        [0.0, -1.0, 0.0],
    ]
)
BODY_FROM_CAMERA.setflags(write=False)

_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@frozen(kw_only=True)
class CameraModel:
    """Pinhole model; pixel ``(u, v)`` has its center at integer coordinates."""

    width: int = field(default=160, validator=Number(gt=0))
    height: int = field(default=120, validator=Number(gt=0))
    focal: float = field(default=120.0, converter=float, validator=Number(gt=0))
    cx: Optional[float] = None
    cy: Optional[float] = None
    tilt: float = field(default=0.0, converter=float)
    """Downward pitch of the camera relative to the body, radians."""

    @property
    def principal_point(self) -> Tuple[float, float]:
        cx = self.width // 2 if self.cx is None else self.cx
        cy = self.height // 2 if self.cy is None else self.cy
        return float(cx), float(cy)

    def camera_pose(self, body: Pose) -> Pose:
        return Pose(x=body.x, y=body.y, z=body.z, roll=body.roll, pitch=body.pitch + self.tilt, yaw=body.yaw)


def _clip_temperatures(value) -> np.ndarray:
    arr = np.clip(np.array(value, dtype=np.float64), *SENSOR_RANGE_C)
    if arr.ndim != 2:
        raise ValueError("Thermal image must be 2-dimensional (height, width).")
    arr.setflags(write=False)
    return arr


@frozen(kw_only=True, eq=False)
class ThermalImage:
    """Calibrated temperatures in degrees Celsius, indexed ``[v, u]``."""

    temperatures: np.ndarray = field(converter=_clip_temperatures)
    camera: CameraModel = field(factory=CameraModel)
    pose: Pose = field(factory=Pose)
    """Camera pose in the map frame; tilt already applied."""

    @property
    def width(self) -> int:
        return int(self.temperatures.shape[1])

    @property
    def height(self) -> int:
        return int(self.temperatures.shape[0])

    def map_from_camera(self) -> np.ndarray:
        return self.pose.rotation().as_matrix() @ BODY_FROM_CAMERA


@frozen
class FireDetection:
    centroid: Tuple[float, float]
    """``(u, v)`` pixel coordinates."""

    pixel_count: int = field(validator=Number(gte=1))
    max_temp: float


class RangeSource(str, Enum):
    LIDAR = "lidar"
    MAP_FALLBACK = "map_fallback"


@frozen
class RangeAssociation:
    range: float
    source: RangeSource
    variance: float


@frozen(kw_only=True)
class FireConfig:
    threshold: float = field(default=100.0, converter=float, validator=Number(gte=-40, lte=330))
    min_pixels: int = field(default=4, validator=Number(gte=1))
    angular_window: float = field(default=math.radians(1.5), converter=float, validator=Number(gt=0))
    sigma_lidar: float = field(default=0.1, converter=float, validator=Number(gt=0))
    r0: float = field(default=5.0, converter=float, validator=Number(gt=0))
    sigma_fallback: float = field(default=2.0, converter=float, validator=Number(gt=0))
    bearing_sigma: float = field(default=math.radians(1.0), converter=float, validator=Number(gt=0))
    max_range: float = field(default=25.0, converter=float, validator=Number(gt=0))
    gate: float = field(default=3.0, converter=float, validator=Number(gt=0))
    min_measurements: int = field(default=3, validator=Number(gte=1))

    @sigma_fallback.validator
    def _check_fallback(self, attribute, value):
        if value**2 < 100.0 * self.sigma_lidar**2:
            raise ValueError("sigma_fallback must be at least 10x sigma_lidar.")


################
# Segmentation #
################


def segment_fire(img: ThermalImage, threshold: float = 100.0, min_pixels: int = 4) -> List[FireDetection]:
    """8-connected components of pixels at or above ``threshold``, in label (scan) order."""
    if not SENSOR_RANGE_C[0] <= threshold <= SENSOR_RANGE_C[1]:
        raise ValueError(f"threshold must lie within {SENSOR_RANGE_C}; got {threshold}.")
    mask = img.temperatures >= threshold
    labels, count = ndimage.label(mask, structure=_EIGHT_CONNECTED)
    if count == 0:
        return []
    index = np.arange(1, count + 1)
    sizes = ndimage.sum_labels(mask, labels, index)
    centers = ndimage.center_of_mass(mask, labels, index)
    peaks = ndimage.maximum(img.temperatures, labels, index)
    detections = []
    for size, (v, u), peak in zip(sizes, centers, peaks):
        if size >= min_pixels:
            detections.append(FireDetection((float(u), float(v)), int(size), float(peak)))
    return detections


############
# Geometry #
############


def pixel_to_ray(det: FireDetection, img: ThermalImage) -> Tuple[np.ndarray, np.ndarray]:
    """Back-project a detection centroid into a map-frame ray ``(origin, unit direction)``."""
    u, v = det.centroid
    cx, cy = img.camera.principal_point
    f = img.camera.focal
    ray_cam = np.array([(u - cx) / f, (v - cy) / f, 1.0])
    ray_cam /= np.linalg.norm(ray_cam)
    direction = img.map_from_camera() @ ray_cam
    return img.pose.position, direction / np.linalg.norm(direction)


def project_point(point, img: ThermalImage) -> Optional[Tuple[float, float, float]]:
    """Pixel coordinates and depth of a map-frame point, ``None`` when it is behind the camera."""
    rel = np.asarray(point, dtype=np.float64) - img.pose.position
    cam = img.map_from_camera().T @ rel
    depth = float(cam[2])
    if depth <= 0:
        return None
    cx, cy = img.camera.principal_point
    f = img.camera.focal
    return cx + f * cam[0] / depth, cy + f * cam[1] / depth, depth


def associate_range(
    origin,
    direction,
    cloud,
    angular_window: float,
    grid: VoxelGrid,
    max_range: float,
    sigma_lidar: float = 0.1,
    r0: float = 5.0,
    sigma_fallback: float = 2.0,
) -> RangeAssociation:
    """Range along a fire ray from nearby LIDAR returns, or from the map when none fall in the window.

    LIDAR ranges are the median along-ray distance of the points within ``angular_window`` of the ray,
    with variance ``sigma_lidar**2 * (range / r0)**2``. The map fallback casts the ray against ``grid``
    (``max_range`` on a miss) with variance ``sigma_fallback**2``.
    """
    origin = np.asarray(origin, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    cloud = np.reshape(np.asarray(cloud, dtype=np.float64), (-1, 3))
    if len(cloud):
        rel = cloud - origin
        norms = np.linalg.norm(rel, axis=1)
        along = rel @ direction
        with np.errstate(invalid="ignore", divide="ignore"):
            cos_angle = np.clip(along / norms, -1.0, 1.0)
        inside = (norms > 0) & (along > 0) & (np.arccos(cos_angle) <= angular_window)
        if np.any(inside):
            rng = float(np.median(along[inside]))
            return RangeAssociation(rng, RangeSource.LIDAR, sigma_lidar**2 * (rng / r0) ** 2)

    hit = raycast(origin, direction, max_range, grid)
    rng = max_range if hit is None else hit
    return RangeAssociation(float(rng), RangeSource.MAP_FALLBACK, sigma_fallback**2)


def _ray_basis(direction: np.ndarray) -> np.ndarray:
    """Orthonormal basis whose first column is ``direction``."""
    d = direction / np.linalg.norm(direction)
    helper = np.zeros(3)
    helper[int(np.argmin(np.abs(d)))] = 1.0
    e2 = np.cross(d, helper)
    e2 /= np.linalg.norm(e2)
    e3 = np.cross(d, e2)
    return np.column_stack([d, e2, e3])


@frozen(kw_only=True, eq=False)
class FireMeasurement:
    """Range-annotated bearing to a fire.

    ``covariance`` is expressed in the ray frame (along-ray first); ``position_covariance``
    is the observer's map-frame localization uncertainty.
    """

    origin: np.ndarray = field(converter=to_vec3)
    direction: np.ndarray = field(converter=to_vec3)
    range: float = field(converter=float, validator=Number(gte=0))
    range_source: RangeSource = field(converter=RangeSource)
    covariance: np.ndarray = field(converter=to_readonly_array, validator=[Finite(), Shape((3, 3))])
    position_covariance: Optional[np.ndarray] = field(default=None)
    robot: str = ""

    @property
    def pseudo_position(self) -> np.ndarray:
        return self.origin + self.range * self.direction

    def map_covariance(self) -> np.ndarray:
        q = _ray_basis(self.direction)
        cov = q @ self.covariance @ q.T
        if self.position_covariance is not None:
            cov = cov + np.asarray(self.position_covariance, dtype=np.float64)
        return 0.5 * (cov + cov.T)


def make_measurement(
    origin,
    direction,
    association: RangeAssociation,
    bearing_sigma: float,
    position_covariance=None,
    robot: str = "",
) -> FireMeasurement:
    """Build a measurement whose lateral spread is ``range * bearing_sigma``."""
    lateral = (max(association.range, 0.1) * bearing_sigma) ** 2
    return FireMeasurement(
        origin=origin,
        direction=direction,
        range=association.range,
        range_source=association.source,
        covariance=np.diag([association.variance, lateral, lateral]),
        position_covariance=position_covariance,
        robot=robot,
    )


###################
# Information form #
###################


@frozen(eq=False)
class FireBelief:
    """Information-form Gaussian ``(Y, y)`` over a fire position."""

    Y: np.ndarray = field(factory=lambda: to_readonly_array(np.zeros((3, 3))), converter=to_readonly_array)
    y: np.ndarray = field(factory=lambda: to_readonly_array(np.zeros(3)), converter=to_readonly_array)
    measurement_count: int = 0
    last_update_tick: int = -1

    @property
    def invertible(self) -> bool:
        return self.measurement_count > 0 and np.linalg.matrix_rank(self.Y) == 3

    def estimate(self) -> Optional[np.ndarray]:
        if not self.invertible:
            return None
        return np.linalg.solve(self.Y, self.y)

    def covariance(self) -> Optional[np.ndarray]:
        if not self.invertible:
            return None
        return np.linalg.inv(self.Y)

    def __eq__(self, other) -> bool:
        if not isinstance(other, FireBelief):
            return NotImplemented
        return (
            self.Y.tobytes() == other.Y.tobytes()
            and self.y.tobytes() == other.y.tobytes()
            and self.measurement_count == other.measurement_count
        )

    __hash__ = None  # pyright: ignore[reportAssignmentType]


def _information(m: FireMeasurement) -> Tuple[np.ndarray, np.ndarray]:
    cov = m.map_covariance()
    try:
        np.linalg.cholesky(cov)
        info = np.linalg.inv(cov)
    except np.linalg.LinAlgError:
        raise SingularCovarianceError() from None
    info = 0.5 * (info + info.T)
    return info, info @ m.pseudo_position


def if_update(belief: FireBelief, m: FireMeasurement, tick: Optional[int] = None) -> FireBelief:
    """Fuse one measurement: ``Y += R^-1``, ``y += R^-1 z``.

    Raises
    ------
    SingularCovarianceError
        The map-frame measurement covariance is not positive definite.
    """
    info, info_z = _information(m)
    return FireBelief(
        belief.Y + info,
        belief.y + info_z,
        belief.measurement_count + 1,
        belief.last_update_tick if tick is None else max(tick, belief.last_update_tick),
    )


def merge_beliefs(a: FireBelief, b: FireBelief) -> FireBelief:
    return FireBelief(
        a.Y + b.Y,
        a.y + b.y,
        a.measurement_count + b.measurement_count,
        max(a.last_update_tick, b.last_update_tick),
    )


###########
# Tracker #
###########


def _mahalanobis(a: np.ndarray, b: np.ndarray, cov: np.ndarray) -> float:
    diff = a - b
    try:
        return float(math.sqrt(max(diff @ np.linalg.solve(cov, diff), 0.0)))
    except np.linalg.LinAlgError:
        return math.inf


@define
class FireTracker:
    """Fleet-shared fire beliefs with Mahalanobis gating."""

    gate: float = 3.0
    beliefs: Dict[str, FireBelief] = field(factory=dict)
    _counter: int = field(default=0, init=False)

    def _new_id(self) -> str:
        self._counter += 1
        return f"fire-{self._counter}"

    def observe(self, m: FireMeasurement, tick: int) -> str:
        """Fuse ``m`` into the best gated belief, spawning a new belief when none accepts it."""
        z = m.pseudo_position
        r_cov = m.map_covariance()
        best: Optional[Tuple[float, str]] = None
        for fid, belief in self.beliefs.items():
            mean = belief.estimate()
            if mean is None:
                continue
            d = _mahalanobis(z, mean, belief.covariance() + r_cov)  # pyright: ignore[reportOptionalOperand]
            if d <= self.gate and (best is None or (d, fid) < best):
                best = (d, fid)
        if best is None:
            fid = self._new_id()
            self.beliefs[fid] = if_update(FireBelief(), m, tick)
            logger.info("New fire belief %s at (%.2f, %.2f, %.2f)", fid, *z)
            return fid
        fid = best[1]
        self.beliefs[fid] = if_update(self.beliefs[fid], m, tick)
        return fid

    def consolidate(self) -> List[Tuple[str, str]]:
        """Merge beliefs whose estimates gate each other; returns ``(kept, absorbed)`` pairs."""
        merged = []
        changed = True
        while changed:
            changed = False
            ids = sorted(self.beliefs, key=_id_key)
            for i, a in enumerate(ids):
                for b in ids[i + 1 :]:
                    ba, bb = self.beliefs[a], self.beliefs[b]
                    ma, mb = ba.estimate(), bb.estimate()
                    if ma is None or mb is None:
                        continue
                    cov = ba.covariance() + bb.covariance()  # pyright: ignore[reportOptionalOperand]
                    if _mahalanobis(ma, mb, cov) <= self.gate:
                        self.beliefs[a] = merge_beliefs(ba, bb)
                        del self.beliefs[b]
                        merged.append((a, b))
                        changed = True
                        break
                if changed:
                    break
        return merged

    def confirmed(self, min_measurements: int = 3) -> Dict[str, FireBelief]:
        return {k: v for k, v in self.beliefs.items() if v.measurement_count >= min_measurements and v.invertible}


def _id_key(fid: str):
    prefix, _, number = fid.rpartition("-")
    return (prefix, int(number)) if number.isdigit() else (fid, 0)


def write_fire_report(tracker: FireTracker, file: Union[str, Path]) -> None:
    """One JSON record per belief, in id order."""
    with Path(file).open("w") as f:
        for fid in sorted(tracker.beliefs, key=_id_key):
            f.write(json.dumps(fire_record(fid, tracker.beliefs[fid])) + "\n")


def fire_record(fid: str, belief: FireBelief) -> dict:
    mean = belief.estimate()
    cov = belief.covariance()
    record: dict = {"id": fid}
    if mean is None or cov is None:
        record.update(dict.fromkeys(("x", "y", "z", "cov_xx", "cov_xy", "cov_xz", "cov_yy", "cov_yz", "cov_zz")))
    else:
        record.update(
            x=float(mean[0]),
            y=float(mean[1]),
            z=float(mean[2]),
            cov_xx=float(cov[0, 0]),
            cov_xy=float(cov[0, 1]),
            cov_xz=float(cov[0, 2]),
            cov_yy=float(cov[1, 1]),
            cov_yz=float(cov[1, 2]),
            cov_zz=float(cov[2, 2]),
        )
    record["measurement_count"] = belief.measurement_count
    record["last_update_tick"] = belief.last_update_tick
    return record
