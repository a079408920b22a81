"""Monte Carlo localization against a precomputed likelihood grid.

One update cycle is ``predict -> weight (map, GPS) -> fuse -> resample -> estimate``
and only runs once the accumulated odometry crosses a translation or rotation threshold.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from attrs import define, field, frozen
from scipy.spatial.transform import Rotation

from ember.exceptions import DegenerateWeightsError, EmptyCloudError, FilterDivergenceError
from ember.utils import optional_vec3, to_readonly_array, wrap_angle
from ember.validators import Finite, Number, Shape
from ember.world_model import LikelihoodGrid, Pose, raycast

__all__ = [
    "MclConfig",
    "MonteCarloLocalizer",
    "OdomDelta",
    "Particle",
    "ParticleSet",
    "Platform",
    "SensorFrame",
    "TRACE_COLUMNS",
    "TraceRow",
    "effective_sample_size",
    "estimate",
    "fuse_and_normalize",
    "initialize",
    "level_cloud",
    "predict",
    "resample",
    "should_update",
    "weight_gps",
    "weight_gps_batch",
    "weight_map",
    "weight_map_batch",
]

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ("tick", "est_x", "est_y", "est_z", "est_yaw", "cov_trace", "n_eff", "used_gps", "used_cloud")


class Platform(str, Enum):
    UAV = "uav"
    UGV = "ugv"


@frozen(kw_only=True)
class OdomDelta:
    """Body-frame motion increment."""

    dx: float = field(default=0.0, converter=float, validator=Finite())
    dy: float = field(default=0.0, converter=float, validator=Finite())
    dz: float = field(default=0.0, converter=float, validator=Finite())
    dyaw: float = field(default=0.0, converter=float, validator=Finite())

    @property
    def translation(self) -> float:
        return math.sqrt(self.dx**2 + self.dy**2 + self.dz**2)

    def compose(self, other: "OdomDelta") -> "OdomDelta":
        """Append ``other`` (expressed in the frame reached after ``self``)."""
        c, s = math.cos(self.dyaw), math.sin(self.dyaw)
        return OdomDelta(
            dx=self.dx + c * other.dx - s * other.dy,
            dy=self.dy + s * other.dx + c * other.dy,
            dz=self.dz + other.dz,
            dyaw=self.dyaw + other.dyaw,
        )


@frozen(kw_only=True, eq=False)
class SensorFrame:
    """Everything the filter may see of the world in one tick."""

    cloud: np.ndarray = field(
        factory=lambda: np.zeros((0, 3)),
        converter=lambda c: to_readonly_array(np.reshape(np.asarray(c, dtype=np.float64), (-1, 3))),
        validator=Finite(),
    )
    gps: Optional[np.ndarray] = field(default=None, converter=optional_vec3, validator=Finite())
    imu_roll: float = field(default=0.0, converter=float)
    imu_pitch: float = field(default=0.0, converter=float)
    imu_yaw: float = field(default=0.0, converter=float)
    altimeter: Optional[float] = None
    """Height above the surface below, meters."""


def _k_validator():
    return Number(gte=0)


@frozen(kw_only=True)
class MclConfig:
    n_particles: int = field(default=500, validator=Number(gt=0))
    alpha: float = field(default=0.5, converter=float, validator=Number(gte=0, lte=1))
    """Map weight share in the fused weight; ``1 - alpha`` goes to GPS."""

    sigma_gps: float = field(default=1.5, converter=float, validator=Number(gt=0))
    sigma_map: float = field(default=0.25, converter=float, validator=Number(gt=0))
    """Range-sensor noise used to build the likelihood grid."""

    trans_threshold: float = field(default=0.2, converter=float, validator=Number(gt=0))
    rot_threshold: float = field(default=0.1, converter=float, validator=Number(gt=0))
    k_x: float = field(default=0.1, converter=float, validator=_k_validator())
    k_y: float = field(default=0.1, converter=float, validator=_k_validator())
    k_z: float = field(default=0.1, converter=float, validator=_k_validator())
    k_yaw: float = field(default=0.1, converter=float, validator=_k_validator())
    platform: Platform = field(default=Platform.UAV, converter=Platform)
    yaw_resample_sigma: float = field(default=0.02, converter=float, validator=Number(gte=0))
    z_resample_sigma: float = field(default=0.05, converter=float, validator=Number(gte=0))
    init_spread: Tuple[float, float, float, float] = field(
        default=(0.3, 0.3, 0.1, 0.05),
        converter=lambda v: tuple(float(x) for x in v),
        validator=Shape((4,)),
    )
    """Initial standard deviations of x, y, z, yaw."""

    resample_ratio: float = field(default=0.5, converter=float, validator=Number(gt=0, lte=1))
    """Resample when ``N_eff < resample_ratio * N``."""

    max_cloud_points: int = field(default=128, validator=Number(gt=0))
    workers: int = field(default=1, validator=Number(gte=1))

    @property
    def motion_noise(self) -> np.ndarray:
        k_z = 0.0 if self.platform is Platform.UGV else self.k_z
        return np.array([self.k_x, self.k_y, k_z, self.k_yaw])


@frozen
class Particle:
    x: float
    y: float
    z: float
    yaw: float
    weight: float = field(validator=Number(gte=0))


def _to_states(value) -> np.ndarray:
    arr = np.array(value, dtype=np.float64).reshape(-1, 4)
    arr.setflags(write=False)
    return arr


@frozen(eq=False)
class ParticleSet:
    """``N`` weighted pose hypotheses; ``states`` rows are ``[x, y, z, yaw]``."""

    states: np.ndarray = field(converter=_to_states)
    weights: np.ndarray = field(converter=to_readonly_array)

    @weights.validator
    def _check_weights(self, attribute, value):
        if value.shape != (len(self.states),):
            raise ValueError(f"Expected {len(self.states)} weights; got shape {value.shape}.")
        if np.any(value < 0):
            raise ValueError("Particle weights must be non-negative.")

    def __len__(self) -> int:
        return len(self.states)

    @property
    def particles(self) -> List[Particle]:
        return [Particle(*(float(c) for c in s), weight=float(w)) for s, w in zip(self.states, self.weights)]

    def replace(self, states=None, weights=None) -> "ParticleSet":
        return ParticleSet(self.states if states is None else states, self.weights if weights is None else weights)


######################
# Update-cycle steps #
######################


def should_update(accumulated: OdomDelta, cfg: MclConfig) -> bool:
    return accumulated.translation >= cfg.trans_threshold or abs(accumulated.dyaw) >= cfg.rot_threshold


def predict(pset: ParticleSet, d: OdomDelta, cfg: MclConfig, rng: np.random.Generator) -> ParticleSet:
    """Propagate every particle by a noisy copy of the body-frame increment ``d``.

    Each increment is drawn from ``Normal(delta, (k * |delta|)**2)`` and rotated by the particle's yaw.
    """
    n = len(pset)
    delta = np.array([d.dx, d.dy, d.dz, d.dyaw])
    scale = cfg.motion_noise * np.abs(delta)
    noisy = rng.normal(loc=delta, scale=scale, size=(n, 4))

    states = np.array(pset.states)
    yaw = states[:, 3]
    c, s = np.cos(yaw), np.sin(yaw)
    states[:, 0] += noisy[:, 0] * c - noisy[:, 1] * s
    states[:, 1] += noisy[:, 0] * s + noisy[:, 1] * c
    states[:, 2] += noisy[:, 2]
    states[:, 3] = wrap_angle(yaw + noisy[:, 3])
    return pset.replace(states=states)


def level_cloud(cloud, roll: float, pitch: float) -> np.ndarray:
    """Remove the IMU roll and pitch from a body-frame cloud; done once per frame."""
    cloud = np.reshape(np.asarray(cloud, dtype=np.float64), (-1, 3))
    if roll == 0.0 and pitch == 0.0:
        return cloud
    return Rotation.from_euler("YX", [pitch, roll]).apply(cloud)


def weight_map_batch(
    states: np.ndarray,
    leveled: np.ndarray,
    grid: LikelihoodGrid,
    workers: int = 1,
) -> np.ndarray:
    """Mean likelihood-grid value of a leveled cloud placed at each particle.

    Particles are split into ``workers`` contiguous chunks; results are joined in particle order.
    """
    if len(leveled) == 0:
        raise EmptyCloudError()
    states = np.reshape(states, (-1, 4))

    def _chunk(block: np.ndarray) -> np.ndarray:
        c = np.cos(block[:, 3])[:, None]
        s = np.sin(block[:, 3])[:, None]
        px = leveled[None, :, 0] * c - leveled[None, :, 1] * s + block[:, 0:1]
        py = leveled[None, :, 0] * s + leveled[None, :, 1] * c + block[:, 1:2]
        pz = leveled[None, :, 2] + block[:, 2:3]
        points = np.stack([px, py, pz], axis=-1).reshape(-1, 3)
        values = grid.lookup(points).reshape(len(block), len(leveled))
        return values.mean(axis=1)

    if workers <= 1 or len(states) < 2 * workers:
        return _chunk(states)
    blocks = np.array_split(states, workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return np.concatenate(list(pool.map(_chunk, blocks)))


def weight_map(p: Particle, cloud, roll: float, pitch: float, grid: LikelihoodGrid) -> float:
    """Map weight of a single particle; see :func:`weight_map_batch`.

    Raises
    ------
    EmptyCloudError
        ``cloud`` holds no points.
    """
    leveled = level_cloud(cloud, roll, pitch)
    return float(weight_map_batch(np.array([[p.x, p.y, p.z, p.yaw]]), leveled, grid)[0])


def weight_gps_batch(states: np.ndarray, gps, sigma_gps: float) -> np.ndarray:
    """Gaussian of the horizontal distance to the GPS fix; altitude is ignored."""
    states = np.reshape(states, (-1, 4))
    gps = np.asarray(gps, dtype=np.float64)
    d2 = (states[:, 0] - gps[0]) ** 2 + (states[:, 1] - gps[1]) ** 2
    return (1.0 / math.sqrt(2.0 * math.pi * sigma_gps**2)) * np.exp(-d2 / (2.0 * sigma_gps**2))


def weight_gps(p: Particle, gps, sigma_gps: float) -> float:
    return float(weight_gps_batch(np.array([[p.x, p.y, p.z, p.yaw]]), gps, sigma_gps)[0])


def fuse_and_normalize(
    pset: ParticleSet,
    map_w: Optional[np.ndarray],
    gps_w: Optional[np.ndarray],
    alpha: float,
) -> ParticleSet:
    """Blend map and GPS weights as ``alpha * map + (1 - alpha) * gps`` and normalize.

    A source that is absent, or whose coefficient is zero, is left out entirely.

    The fused weights are first divided by the power of two at or above their maximum. That step
    is exact, so scaling every input weight by a power of two leaves the result bitwise unchanged;
    any other common factor changes it by float rounding only (a few ulp). It also keeps the sum
    finite for weights near the float limits.

    Raises
    ------
    FilterDivergenceError
        Every fused weight is zero, or a weight is not finite.
    """
    map_on, gps_on = _active_sources(map_w, gps_w, alpha)
    if map_on and gps_on:
        fused = alpha * np.asarray(map_w) + (1.0 - alpha) * np.asarray(gps_w)
    elif map_on:
        fused = np.array(map_w, dtype=np.float64)
    elif gps_on:
        fused = np.array(gps_w, dtype=np.float64)
    else:
        raise ValueError("At least one weight source is required.")
    peak = fused.max()
    if not peak > 0 or not np.isfinite(peak):
        raise FilterDivergenceError()
    fused = np.ldexp(fused, -np.frexp(peak)[1])
    return pset.replace(weights=fused / fused.sum())


def _active_sources(map_w, gps_w, alpha: float) -> Tuple[bool, bool]:
    map_on = map_w is not None
    gps_on = gps_w is not None
    if map_on and gps_on:
        map_on = alpha > 0.0
        gps_on = alpha < 1.0
    return map_on, gps_on


def effective_sample_size(weights) -> float:
    weights = np.asarray(weights, dtype=np.float64)
    return float(1.0 / np.sum(weights**2))


def resample(
    pset: ParticleSet,
    altitude: Optional[float],
    imu_yaw: Optional[float],
    cfg: MclConfig,
    rng: np.random.Generator,
) -> ParticleSet:
    """Low-variance resampling followed by the UAV altitude and yaw constraints.

    Parameters
    ----------
    pset: ParticleSet
        Set with normalized weights.
    altitude: Optional[float]
        Map-frame altitude derived from the altimeter; redraws every ``z`` around it (UAV only).
    imu_yaw: Optional[float]
        Redraws every yaw around it (UAV only).
    cfg: MclConfig
        Filter configuration.
    rng: numpy.random.Generator
        Random source.

    Returns
    -------
    ParticleSet
        ``N`` particles with uniform weights.

    Raises
    ------
    DegenerateWeightsError
        Weights sum to zero or are not finite.
    """
    weights = np.asarray(pset.weights, dtype=np.float64)
    n = len(weights)
    total = weights.sum()
    if not total > 0 or not np.isfinite(total):
        raise DegenerateWeightsError()
    cumulative = np.cumsum(weights) / total
    positions = rng.uniform(0.0, 1.0 / n) + np.arange(n) / n
    idx = np.minimum(np.searchsorted(cumulative, positions, side="right"), n - 1)
    states = np.array(pset.states[idx])

    if cfg.platform is Platform.UAV:
        if altitude is not None:
            states[:, 2] = rng.normal(altitude, cfg.z_resample_sigma, n)
        if imu_yaw is not None:
            states[:, 3] = wrap_angle(rng.normal(imu_yaw, cfg.yaw_resample_sigma, n))
    return ParticleSet(states, np.full(n, 1.0 / n))


def estimate(pset: ParticleSet) -> Tuple[Pose, np.ndarray]:
    """Weighted mean pose (circular mean for yaw) and the 4x4 weighted covariance."""
    w = np.asarray(pset.weights, dtype=np.float64)
    w = w / w.sum()
    states = pset.states
    xyz = w @ states[:, :3]
    yaw = math.atan2(float(w @ np.sin(states[:, 3])), float(w @ np.cos(states[:, 3])))
    residual = np.empty_like(states)
    residual[:, :3] = states[:, :3] - xyz
    residual[:, 3] = wrap_angle(states[:, 3] - yaw)
    cov = (residual * w[:, None]).T @ residual
    return Pose(x=xyz[0], y=xyz[1], z=xyz[2], yaw=yaw), cov


def initialize(
    pose: Pose,
    spreads: Sequence[float],
    cfg: MclConfig,
    rng: np.random.Generator,
) -> ParticleSet:
    """Scatter ``cfg.n_particles`` particles around ``pose`` with per-axis standard deviations."""
    spreads = np.array(spreads, dtype=np.float64)
    if spreads.shape != (4,) or np.any(spreads < 0):
        raise ValueError("spreads must be 4 non-negative values (x, y, z, yaw).")
    if cfg.platform is Platform.UGV:
        spreads[2] = 0.0
    n = cfg.n_particles
    loc = np.array([pose.x, pose.y, pose.z, pose.yaw])
    states = rng.normal(loc=loc, scale=spreads, size=(n, 4))
    states[:, 3] = wrap_angle(states[:, 3])
    return ParticleSet(states, np.full(n, 1.0 / n))


#############
# Localizer #
#############


@frozen
class TraceRow:
    tick: int
    est_x: float
    est_y: float
    est_z: float
    est_yaw: float
    cov_trace: float
    n_eff: float
    used_gps: int
    used_cloud: int

    def as_tuple(self) -> tuple:
        return (
            self.tick,
            self.est_x,
            self.est_y,
            self.est_z,
            self.est_yaw,
            self.cov_trace,
            self.n_eff,
            self.used_gps,
            self.used_cloud,
        )


def _subsample(cloud: np.ndarray, limit: int) -> np.ndarray:
    if len(cloud) <= limit:
        return cloud
    return cloud[np.linspace(0, len(cloud) - 1, limit).round().astype(np.int64)]


@define
class MonteCarloLocalizer:
    """Single-writer filter owning its particles, odometry accumulator and trace."""

    config: MclConfig
    likelihood: LikelihoodGrid
    rng: np.random.Generator
    particles: ParticleSet
    pose: Pose
    covariance: np.ndarray = field(factory=lambda: np.zeros((4, 4)))
    accumulated: OdomDelta = field(factory=OdomDelta)
    trace: List[TraceRow] = field(factory=list)
    recoveries: int = 0

    @classmethod
    def start(
        cls,
        pose: Pose,
        config: MclConfig,
        likelihood: LikelihoodGrid,
        rng: np.random.Generator,
    ) -> "MonteCarloLocalizer":
        particles = initialize(pose, config.init_spread, config, rng)
        est, cov = estimate(particles)
        return cls(config, likelihood, rng, particles, est, cov)

    def current_pose(self) -> Pose:
        """Last estimate dead-reckoned with the odometry accumulated since."""
        d = self.accumulated
        c, s = math.cos(self.pose.yaw), math.sin(self.pose.yaw)
        return Pose(
            x=self.pose.x + c * d.dx - s * d.dy,
            y=self.pose.y + s * d.dx + c * d.dy,
            z=self.pose.z + d.dz,
            yaw=self.pose.yaw + d.dyaw,
        )

    def update(self, odom: OdomDelta, frame: SensorFrame, tick: int) -> Optional[TraceRow]:
        """Accumulate ``odom``; run one update cycle once a motion threshold is crossed."""
        self.accumulated = self.accumulated.compose(odom)
        if not should_update(self.accumulated, self.config):
            return None
        row = self._cycle(frame, tick)
        self.accumulated = OdomDelta()
        self.trace.append(row)
        return row

    def _cycle(self, frame: SensorFrame, tick: int) -> TraceRow:
        cfg = self.config
        prior = predict(self.particles, self.accumulated, cfg, self.rng)

        map_w = gps_w = None
        cloud = _subsample(np.asarray(frame.cloud), cfg.max_cloud_points)
        if len(cloud):
            leveled = level_cloud(cloud, frame.imu_roll, frame.imu_pitch)
            map_w = weight_map_batch(prior.states, leveled, self.likelihood, workers=cfg.workers)
        if frame.gps is not None:
            gps_w = weight_gps_batch(prior.states, frame.gps, cfg.sigma_gps)

        used_cloud, used_gps = _active_sources(map_w, gps_w, cfg.alpha)
        if map_w is None and gps_w is None:
            weighted = prior
        else:
            try:
                fused = fuse_and_normalize(prior, map_w, gps_w, cfg.alpha)
            except FilterDivergenceError:
                return self._recover(tick)
            weighted = fused
            if not np.all(prior.weights == prior.weights[0]):
                combined = fused.weights * prior.weights
                total = combined.sum()
                if total > 0:
                    weighted = fused.replace(weights=combined / total)

        n_eff = effective_sample_size(weighted.weights)
        if n_eff < cfg.resample_ratio * len(weighted):
            altitude = self._altitude(frame)
            imu_yaw = frame.imu_yaw if cfg.platform is Platform.UAV else None
            weighted = resample(weighted, altitude, imu_yaw, cfg, self.rng)

        self.particles = weighted
        self.pose, self.covariance = estimate(weighted)
        return self._row(tick, n_eff, used_gps, used_cloud)

    def _altitude(self, frame: SensorFrame) -> Optional[float]:
        if self.config.platform is not Platform.UAV or frame.altimeter is None:
            return None
        grid = self.likelihood.grid
        origin = np.array([self.pose.x, self.pose.y, self.pose.z])
        below = raycast(origin, (0.0, 0.0, -1.0), float(grid.upper[2] - grid.origin[2]), grid)
        ground = float(grid.origin[2]) if below is None else self.pose.z - below
        return ground + frame.altimeter

    def _recover(self, tick: int) -> TraceRow:
        logger.warning("Tick %d: particle weights collapsed; reinitializing around last estimate.", tick)
        self.recoveries += 1
        spreads = [3.0 * s for s in self.config.init_spread]
        self.particles = initialize(self.pose, spreads, self.config, self.rng)
        self.pose, self.covariance = estimate(self.particles)
        return self._row(tick, float(len(self.particles)), False, False)

    def _row(self, tick: int, n_eff: float, used_gps: bool, used_cloud: bool) -> TraceRow:
        return TraceRow(
            tick=tick,
            est_x=self.pose.x,
            est_y=self.pose.y,
            est_z=self.pose.z,
            est_yaw=self.pose.yaw,
            cov_trace=float(np.trace(self.covariance)),
            n_eff=n_eff,
            used_gps=int(used_gps),
            used_cloud=int(used_cloud),
        )
