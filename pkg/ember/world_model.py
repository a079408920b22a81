"""Occupancy map, likelihood grid and the geometric queries shared by every other module."""

import logging
import math
from pathlib import Path
from typing import Iterator, Optional, Sequence, Tuple, Union

import numpy as np
from attrs import field, frozen
from scipy import ndimage
from scipy.spatial.transform import Rotation

from ember.exceptions import EmptyMapError, MapFormatError, OutOfBoundsError
from ember.utils import to_vec3, wrap_angle
from ember.validators import Number

__all__ = [
    "LikelihoodGrid",
    "MAP_MAGIC",
    "Pose",
    "VoxelGrid",
    "build_likelihood_grid",
    "line_of_sight",
    "load_map",
    "nearest_occupied_distance_field",
    "raycast",
    "raycast_many",
    "save_map",
]

logger = logging.getLogger(__name__)

MAP_MAGIC = "EMBRMAP1"

_TIE = 1e-9

Index = Tuple[int, int, int]


def _to_occupancy(value) -> np.ndarray:
    arr = np.array(value, dtype=bool)
    if arr.ndim != 3:
        raise ValueError(f"Occupancy must be 3-dimensional; got {arr.ndim} dimension(s).")
    if min(arr.shape) < 1:
        raise ValueError(f"Every map dimension must be >= 1; got {arr.shape}.")
    arr.setflags(write=False)
    return arr


@frozen(eq=False)
class VoxelGrid:
    """Dense boolean occupancy map indexed ``[x, y, z]``.

    Voxel ``(i, j, k)`` spans ``origin + [i, i+1) * resolution`` on each axis;
    its center is at ``origin + (index + 0.5) * resolution``.
    """

    occupancy: np.ndarray = field(converter=_to_occupancy)
    resolution: float = field(kw_only=True, converter=float, validator=Number(gt=0))
    origin: np.ndarray = field(kw_only=True, factory=lambda: np.zeros(3), converter=to_vec3)

    @classmethod
    def empty(cls, dims: Sequence[int], resolution: float, origin=(0.0, 0.0, 0.0)) -> "VoxelGrid":
        return cls(np.zeros(tuple(int(d) for d in dims), dtype=bool), resolution=resolution, origin=origin)

    @property
    def dims(self) -> Index:
        nx, ny, nz = self.occupancy.shape
        return int(nx), int(ny), int(nz)

    @property
    def upper(self) -> np.ndarray:
        """Far corner of the map volume."""
        return self.origin + np.array(self.dims, dtype=np.float64) * self.resolution

    @property
    def n_occupied(self) -> int:
        return int(np.count_nonzero(self.occupancy))

    def __eq__(self, other) -> bool:
        if not isinstance(other, VoxelGrid):
            return NotImplemented
        return (
            self.dims == other.dims
            and self.resolution == other.resolution
            and bool(np.array_equal(self.origin, other.origin))
            and bool(np.array_equal(self.occupancy, other.occupancy))
        )

    __hash__ = None  # pyright: ignore[reportAssignmentType]

    def to_grid(self, points) -> np.ndarray:
        """Continuous grid coordinates; voxel ``i`` spans ``[i, i+1)``."""
        return (np.asarray(points, dtype=np.float64) - self.origin) / self.resolution

    def world_to_index(self, point) -> Optional[Index]:
        """Voxel containing ``point``, or ``None`` when the point is outside the map."""
        g = np.floor(self.to_grid(point))
        if not np.all(np.isfinite(g)):
            return None
        idx = tuple(int(c) for c in g)
        if any(c < 0 or c >= d for c, d in zip(idx, self.dims)):
            return None
        return idx  # pyright: ignore[reportReturnType]

    def world_to_index_many(self, points) -> Tuple[np.ndarray, np.ndarray]:
        """Vectorized :meth:`world_to_index`.

        Returns
        -------
        indices: numpy.ndarray
            ``(M, 3)`` integer indices; rows outside the map are clipped and must be masked.
        inside: numpy.ndarray
            ``(M,)`` boolean mask of in-bounds points.
        """
        g = np.floor(self.to_grid(np.reshape(points, (-1, 3))))
        dims = np.array(self.dims)
        with np.errstate(invalid="ignore"):
            inside = np.all((g >= 0) & (g < dims), axis=1)
        g = np.where(np.isfinite(g), g, 0)
        idx = np.clip(g, 0, dims - 1).astype(np.int64)
        return idx, inside

    def index_to_world(self, index) -> np.ndarray:
        """Center of voxel ``index``; accepts ``(3,)`` or ``(M, 3)``."""
        return self.origin + (np.asarray(index, dtype=np.float64) + 0.5) * self.resolution

    def contains(self, point) -> bool:
        return self.world_to_index(point) is not None

    def is_occupied(self, point) -> bool:
        idx = self.world_to_index(point)
        if idx is None:
            raise OutOfBoundsError(position=tuple(np.asarray(point, dtype=np.float64)))
        return bool(self.occupancy[idx])

    def is_free(self, point) -> bool:
        """``True`` iff ``point`` is inside the map and not occupied."""
        idx = self.world_to_index(point)
        return idx is not None and not self.occupancy[idx]

    def coarsen(self, factor: int) -> "VoxelGrid":
        """Block-maximum downsample; padding beyond the far faces counts as free."""
        factor = int(factor)
        if factor < 1:
            raise ValueError(f"factor must be >= 1; got {factor}.")
        if factor == 1:
            return self
        coarse_dims = [-(-d // factor) for d in self.dims]
        padded = np.zeros([c * factor for c in coarse_dims], dtype=bool)
        nx, ny, nz = self.dims
        padded[:nx, :ny, :nz] = self.occupancy
        blocks = padded.reshape(coarse_dims[0], factor, coarse_dims[1], factor, coarse_dims[2], factor)
        return VoxelGrid(blocks.any(axis=(1, 3, 5)), resolution=self.resolution * factor, origin=self.origin)

    def slice_z(self, z: float) -> "VoxelGrid":
        """Single-layer map holding the layer that contains height ``z``."""
        k = int(math.floor((z - self.origin[2]) / self.resolution))
        if not 0 <= k < self.dims[2]:
            raise OutOfBoundsError(msg=f"Height {z:.3f} is outside of the map.")
        origin = self.origin.copy()
        origin[2] = self.origin[2] + k * self.resolution
        return VoxelGrid(self.occupancy[:, :, k : k + 1], resolution=self.resolution, origin=origin)

    def with_points(self, points) -> "VoxelGrid":
        """Copy with the voxels containing ``points`` marked occupied; out-of-bounds points are ignored."""
        points = np.reshape(np.asarray(points, dtype=np.float64), (-1, 3))
        occupancy = self.occupancy.copy()
        if len(points):
            idx, inside = self.world_to_index_many(points)
            idx = idx[inside]
            occupancy[idx[:, 0], idx[:, 1], idx[:, 2]] = True
        return VoxelGrid(occupancy, resolution=self.resolution, origin=self.origin)

    def to_bytes(self) -> bytes:
        """Occupancy payload, x-fastest, one byte per voxel."""
        return self.occupancy.astype(np.uint8).tobytes(order="F")


@frozen
class Pose:
    x: float = field(default=0.0, converter=float)
    y: float = field(default=0.0, converter=float)
    z: float = field(default=0.0, converter=float)
    roll: float = field(default=0.0, converter=wrap_angle)
    pitch: float = field(default=0.0, converter=wrap_angle)
    yaw: float = field(default=0.0, converter=wrap_angle)

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def rotation(self) -> Rotation:
        """Body-to-map rotation (yaw, then pitch, then roll about the moving axes)."""
        return Rotation.from_euler("ZYX", [self.yaw, self.pitch, self.roll])


#############
# Map files #
#############


def save_map(grid: VoxelGrid, path: Union[str, Path]) -> None:
    """Write ``grid`` in the ``EMBRMAP1`` format."""
    nx, ny, nz = grid.dims
    ox, oy, oz = (float(c) for c in grid.origin)
    header = f"{MAP_MAGIC} {nx} {ny} {nz} {grid.resolution!r} {ox!r} {oy!r} {oz!r}\n"
    Path(path).write_bytes(header.encode("ascii") + grid.to_bytes())


def load_map(path: Union[str, Path]) -> VoxelGrid:
    """Read an ``EMBRMAP1`` file.

    Raises
    ------
    MapFormatError
        Bad header, truncated/oversized payload or a byte other than ``0x00``/``0x01``.
    """
    path = Path(path)
    data = path.read_bytes()
    newline = data.find(b"\n")
    if newline < 0:
        raise MapFormatError(msg="missing header line", path=path)
    try:
        tokens = data[:newline].decode("ascii").split()
    except UnicodeDecodeError:
        raise MapFormatError(msg="header is not ASCII", path=path) from None
    if not tokens or tokens[0] != MAP_MAGIC:
        raise MapFormatError(msg=f"expected magic {MAP_MAGIC}", path=path)
    if len(tokens) != 8:
        raise MapFormatError(msg=f"expected 8 header fields; got {len(tokens)}", path=path)
    try:
        nx, ny, nz = (int(t) for t in tokens[1:4])
        resolution, ox, oy, oz = (float(t) for t in tokens[4:8])
    except ValueError:
        raise MapFormatError(msg="non-numeric header field", path=path) from None
    if min(nx, ny, nz) < 1:
        raise MapFormatError(msg="dimensions must be >= 1", path=path)
    if not (resolution > 0 and math.isfinite(resolution)):
        raise MapFormatError(msg="resolution must be positive", path=path)

    payload = np.frombuffer(data, dtype=np.uint8, offset=newline + 1)
    if payload.size != nx * ny * nz:
        raise MapFormatError(msg=f"expected {nx * ny * nz} voxel bytes; got {payload.size}", path=path)
    if np.any(payload > 1):
        bad = int(payload[np.argmax(payload > 1)])
        raise MapFormatError(msg=f"invalid voxel byte 0x{bad:02x}", path=path)

    occupancy = payload.reshape((nx, ny, nz), order="F").astype(bool)
    logger.debug("Loaded %dx%dx%d map from %s", nx, ny, nz, path)
    return VoxelGrid(occupancy, resolution=resolution, origin=(ox, oy, oz))


###################
# Likelihood grid #
###################


def nearest_occupied_distance_field(grid: VoxelGrid) -> np.ndarray:
    """Exact Euclidean distance (meters) from every voxel center to the nearest occupied voxel center.

    Raises
    ------
    EmptyMapError
        No voxel is occupied.
    """
    if not grid.occupancy.any():
        raise EmptyMapError()
    distance = ndimage.distance_transform_edt(~grid.occupancy, sampling=grid.resolution)
    return np.asarray(distance, dtype=np.float64)


@frozen(eq=False)
class LikelihoodGrid:
    """Gaussian of the distance to the nearest occupied voxel, precomputed per voxel."""

    grid: VoxelGrid
    values: np.ndarray = field(repr=False)
    sigma: float = field(converter=float, validator=Number(gt=0))
    truncation_radius: float = field(converter=float, validator=Number(gte=0))

    @property
    def peak(self) -> float:
        return 1.0 / math.sqrt(2.0 * math.pi * self.sigma**2)

    def lookup(self, points) -> np.ndarray:
        """Values at the voxels containing ``points`` (``(M, 3)``); out-of-bounds points give 0."""
        idx, inside = self.grid.world_to_index_many(points)
        out = self.values[idx[:, 0], idx[:, 1], idx[:, 2]]
        return np.where(inside, out, 0.0)

    def value_at(self, point) -> float:
        idx = self.grid.world_to_index(point)
        if idx is None:
            return 0.0
        return float(self.values[idx])


def build_likelihood_grid(
    grid: VoxelGrid,
    sigma: float,
    truncation_radius: Optional[float] = None,
) -> LikelihoodGrid:
    """Precompute the map-weighting sensor model.

    Parameters
    ----------
    grid: VoxelGrid
        Map with at least one occupied voxel.
    sigma: float
        Range-sensor noise standard deviation in meters.
    truncation_radius: Optional[float]
        Cells farther than this from any obstacle store 0. Defaults to ``3 * sigma``.

    Returns
    -------
    LikelihoodGrid
        Read-only grid of ``peak * exp(-d**2 / (2 sigma**2))``.
    """
    if not sigma > 0:
        raise ValueError(f"sigma must be > 0; got {sigma}.")
    if truncation_radius is None:
        truncation_radius = 3.0 * sigma
    distance = nearest_occupied_distance_field(grid)
    peak = 1.0 / math.sqrt(2.0 * math.pi * sigma**2)
    values = peak * np.exp(-(distance**2) / (2.0 * sigma**2))
    values[distance > truncation_radius] = 0.0
    values.setflags(write=False)
    logger.debug("Built likelihood grid sigma=%.3f truncation=%.3f", sigma, truncation_radius)
    return LikelihoodGrid(grid, values, sigma, truncation_radius)


#####################
# Voxel traversal   #
#####################


def _march(g0: np.ndarray, g1: np.ndarray) -> Iterator[Index]:
    """Voxels pierced by the grid-unit segment ``g0 -> g1``, in order.

    Crossings through an edge or corner also yield the voxels sharing it.
    Yielded side voxels may lie outside of the map.
    """
    v = [int(math.floor(c)) for c in g0]
    end = [int(math.floor(c)) for c in g1]
    d = [float(b - a) for a, b in zip(g0, g1)]
    step = [0, 0, 0]
    t_max = [math.inf] * 3
    t_delta = [math.inf] * 3
    for k in range(3):
        if d[k] > 0:
            step[k] = 1
            t_max[k] = (v[k] + 1 - g0[k]) / d[k]
            t_delta[k] = 1.0 / d[k]
        elif d[k] < 0:
            step[k] = -1
            t_max[k] = (v[k] - g0[k]) / d[k]
            t_delta[k] = -1.0 / d[k]
        if v[k] == end[k]:
            t_max[k] = math.inf

    yield tuple(v)  # pyright: ignore[reportReturnType]
    while v != end:
        t_min = min(t_max)
        if t_min > 1.0 + _TIE:
            break
        axes = [k for k in range(3) if t_max[k] - t_min <= _TIE]
        for mask in range(1, (1 << len(axes)) - 1):
            side = list(v)
            for bit, k in enumerate(axes):
                if mask & (1 << bit):
                    side[k] += step[k]
            yield tuple(side)  # pyright: ignore[reportReturnType]
        for k in axes:
            v[k] += step[k]
            t_max[k] = math.inf if v[k] == end[k] else t_max[k] + t_delta[k]
        yield tuple(v)  # pyright: ignore[reportReturnType]


def line_of_sight(a, b, grid: VoxelGrid) -> bool:
    """``True`` iff the segment ``a -> b`` crosses no occupied voxel.

    Crossings exactly through a voxel edge or corner also test the voxels sharing it,
    so diagonal moves cannot slip between two occupied voxels.
    The test is symmetric in ``a`` and ``b``.

    Raises
    ------
    OutOfBoundsError
        Either endpoint is outside of the map.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    for p in (a, b):
        if grid.world_to_index(p) is None:
            raise OutOfBoundsError(position=tuple(p))
    if tuple(b) < tuple(a):
        a, b = b, a
    occupancy = grid.occupancy
    dims = grid.dims
    for idx in _march(grid.to_grid(a), grid.to_grid(b)):
        if all(0 <= c < n for c, n in zip(idx, dims)) and occupancy[idx]:
            return False
    return True


def _validate_directions(directions: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(directions, axis=1)
    if np.any(norms == 0):
        raise ValueError("Ray direction must be non-zero.")
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise ValueError("Ray direction must be a unit vector.")
    return directions


def raycast_many(origins, directions, max_range: float, grid: VoxelGrid) -> np.ndarray:
    """Distance along each ray to the boundary of the first occupied voxel.

    Parameters
    ----------
    origins: array-like
        ``(R, 3)`` ray origins in meters; may lie outside the map.
    directions: array-like
        ``(R, 3)`` unit directions.
    max_range: float
        Hits beyond this distance are reported as misses.
    grid: VoxelGrid
        Map to cast against.

    Returns
    -------
    numpy.ndarray
        ``(R,)`` hit distances, ``nan`` for a miss.
    """
    origins = np.reshape(np.asarray(origins, dtype=np.float64), (-1, 3))
    directions = _validate_directions(np.reshape(np.asarray(directions, dtype=np.float64), (-1, 3)))
    n_rays = len(origins)
    hits = np.full(n_rays, np.nan)
    if n_rays == 0:
        return hits

    res = grid.resolution
    lo = grid.origin
    hi = grid.upper
    dims = np.array(grid.dims)

    # Slab entry/exit against the map volume.
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / directions
        t_a = (lo - origins) * inv
        t_b = (hi - origins) * inv
    parallel = directions == 0
    inside_slab = (origins >= lo) & (origins < hi)
    t_near = np.where(parallel, np.where(inside_slab, -np.inf, np.inf), np.minimum(t_a, t_b))
    t_far = np.where(parallel, np.where(inside_slab, np.inf, -np.inf), np.maximum(t_a, t_b))
    t_enter = np.max(t_near, axis=1)
    t_exit = np.min(t_far, axis=1)
    t_cur = np.maximum(t_enter, 0.0)
    active = (t_enter < t_exit) & (t_exit > 0) & (t_cur <= max_range)

    entry = origins + directions * np.where(active, t_cur, 0.0)[:, None]
    v = np.floor((entry - lo) / res)
    v = np.where(np.isfinite(v), v, 0)
    v = np.clip(v, 0, dims - 1).astype(np.int64)

    step = np.sign(directions).astype(np.int64)
    boundary_offset = (step > 0).astype(np.int64)

    def _t_max(voxels):
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (lo + (voxels + boundary_offset) * res - origins) / directions
        return np.where(step == 0, np.inf, t)

    t_max = _t_max(v)
    rows = np.arange(n_rays)
    occupancy = grid.occupancy
    for _ in range(int(dims.sum()) + 3):
        if not active.any():
            break
        occupied = occupancy[v[:, 0], v[:, 1], v[:, 2]]
        hit_now = active & occupied
        hits[hit_now] = t_cur[hit_now]
        active &= ~occupied

        axis = np.argmin(t_max, axis=1)
        t_cur = np.where(active, t_max[rows, axis], t_cur)
        v[rows, axis] += np.where(active, step[rows, axis], 0)
        in_bounds = np.all((v >= 0) & (v < dims), axis=1)
        active &= in_bounds & (t_cur <= max_range)
        v = np.clip(v, 0, dims - 1)
        t_max = _t_max(v)
    return hits


def raycast(origin, direction, max_range: float, grid: VoxelGrid) -> Optional[float]:
    """Distance to the first occupied voxel boundary along a unit ``direction``, ``None`` on a miss.

    Raises
    ------
    ValueError
        ``direction`` is zero or not normalized to within ``1e-6``.
    """
    hit = raycast_many(np.reshape(origin, (1, 3)), np.reshape(direction, (1, 3)), max_range, grid)[0]
    return None if np.isnan(hit) else float(hit)
