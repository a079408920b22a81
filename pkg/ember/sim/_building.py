"""Synthetic multi-floor building shells on a voxel map.

The map origin sits one voxel below ``z = 0`` so that the bottom layer is solid ground.
Floor ``k`` has its walking surface at ``z = k * floor_height``; the slab carrying it occupies
the ``wall_thickness`` just below that height, and the roof is the slab of floor ``floors``.
"""

import math
from enum import Enum
from typing import Optional, Tuple

import numpy as np
from attrs import field, frozen

from ember.coordination import Area, AreaKind
from ember.exceptions import BuildingError
from ember.utils import to_vec3
from ember.validators import Number
from ember.world_model import VoxelGrid

__all__ = [
    "BuildingLayout",
    "BuildingParams",
    "Face",
    "MapParams",
    "Opening",
    "OpeningKind",
    "generate_building",
    "generate_random_map",
]


class Face(str, Enum):
    NORTH = "north"
    SOUTH = "south"
    EAST = "east"
    WEST = "west"


class OpeningKind(str, Enum):
    DOOR = "door"
    WINDOW = "window"


@frozen(kw_only=True)
class Opening:
    """Rectangular hole through one wall.

    ``center`` is measured along the face: the x coordinate for north/south faces,
    the y coordinate for east/west faces.
    """

    kind: OpeningKind = field(default=OpeningKind.WINDOW, converter=OpeningKind)
    face: Face = field(converter=Face)
    floor: int = field(default=0, validator=Number(gte=0))
    center: float = field(converter=float)
    width: float = field(default=1.0, converter=float, validator=Number(gt=0))
    height: float = field(default=1.2, converter=float, validator=Number(gt=0))
    sill: Optional[float] = field(default=None)
    """Height of the bottom edge above the floor; doors default to 0, windows to 1 m."""

    @property
    def bottom(self) -> float:
        if self.sill is not None:
            return float(self.sill)
        return 0.0 if self.kind is OpeningKind.DOOR else 1.0


@frozen(kw_only=True)
class MapParams:
    size: Tuple[float, float, float] = field(
        default=(32.0, 32.0, 10.0), converter=lambda v: tuple(float(x) for x in v)
    )
    """Extent above the ground layer, meters."""

    resolution: float = field(default=0.25, converter=float, validator=Number(gt=0))

    @property
    def dims(self) -> Tuple[int, int, int]:
        nx, ny, nz = (int(math.ceil(s / self.resolution - 1e-9)) for s in self.size)
        return nx, ny, nz + 1

    @property
    def origin(self) -> np.ndarray:
        return np.array([0.0, 0.0, -self.resolution])


@frozen(kw_only=True)
class BuildingParams:
    x: float = field(default=11.0, converter=float)
    y: float = field(default=11.0, converter=float)
    width: float = field(default=10.0, converter=float, validator=Number(gt=0))
    """Extent along x."""

    depth: float = field(default=10.0, converter=float, validator=Number(gt=0))
    """Extent along y."""

    floors: int = field(default=1, validator=Number(gte=1))
    floor_height: float = field(default=3.0, converter=float, validator=Number(gt=0))
    wall_thickness: float = field(default=0.25, converter=float, validator=Number(gt=0))
    openings: Tuple[Opening, ...] = field(default=(), converter=tuple)
    random_windows: int = field(default=0, validator=Number(gte=0))
    """Extra windows placed from the seed."""

    facade_margin: float = field(default=3.0, converter=float, validator=Number(gte=0))
    """Horizontal distance from the walls still counted as facade."""

    @property
    def height(self) -> float:
        return self.floors * self.floor_height

    @property
    def layout(self) -> "BuildingLayout":
        return BuildingLayout(self)


@frozen
class BuildingLayout:
    """Geometric queries on the declared building, independent of any map."""

    params: BuildingParams

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.params.x, self.params.y, 0.0])

    @property
    def upper(self) -> np.ndarray:
        p = self.params
        return np.array([p.x + p.width, p.y + p.depth, p.height])

    def inside(self, position) -> bool:
        """``True`` within the outer shell volume, walls and roof included."""
        pos = to_vec3(position)
        return bool(np.all(pos >= self.lower) and np.all(pos <= self.upper))

    def interior(self, position) -> bool:
        """``True`` on the inner side of the wall center lines, below the roof."""
        pos = to_vec3(position)
        half = self.params.wall_thickness / 2
        lo = self.lower + [half, half, 0.0]
        hi = self.upper - [half, half, 0.0]
        return bool(np.all(pos >= lo) and np.all(pos <= hi))

    def floor_of(self, z: float) -> int:
        k = int(math.floor(z / self.params.floor_height))
        return min(max(k, 0), self.params.floors - 1)

    def near_facade(self, position) -> bool:
        pos = to_vec3(position)
        m = self.params.facade_margin
        lo, hi = self.lower[:2] - m, self.upper[:2] + m
        return bool(np.all(pos[:2] >= lo) and np.all(pos[:2] <= hi) and pos[2] <= self.params.height)

    def area_of(self, position, indoor: Optional[bool] = None) -> Area:
        """Allocation area holding ``position``.

        Parameters
        ----------
        position: array-like
            Map-frame point.
        indoor: Optional[bool]
            Decide the interior/exterior question externally (e.g. from where a fire was seen);
            by default it is taken from :meth:`interior`.
        """
        pos = to_vec3(position)
        if indoor is None:
            indoor = self.interior(pos)
        floor = self.floor_of(float(pos[2]))
        if indoor:
            return Area(AreaKind.FLOOR_INDOOR, floor)
        if self.near_facade(pos):
            return Area(AreaKind.FLOOR_FACADE, floor)
        return Area(AreaKind.OUTDOOR)


def _span(lo: float, hi: float, origin: float, res: float, n: int) -> slice:
    i0 = int(round((lo - origin) / res))
    i1 = int(round((hi - origin) / res))
    return slice(max(i0, 0), min(i1, n))


def _box(occupancy: np.ndarray, lo, hi, origin: np.ndarray, res: float, value: bool) -> None:
    dims = occupancy.shape
    sx, sy, sz = (_span(lo[k], hi[k], origin[k], res, dims[k]) for k in range(3))
    occupancy[sx, sy, sz] = value


def _opening_box(p: BuildingParams, o: Opening) -> Tuple[np.ndarray, np.ndarray]:
    t = p.wall_thickness
    z0 = o.floor * p.floor_height + o.bottom
    z1 = z0 + o.height
    a, b = o.center - o.width / 2, o.center + o.width / 2
    if o.face is Face.SOUTH:
        return np.array([a, p.y, z0]), np.array([b, p.y + t, z1])
    if o.face is Face.NORTH:
        return np.array([a, p.y + p.depth - t, z0]), np.array([b, p.y + p.depth, z1])
    if o.face is Face.WEST:
        return np.array([p.x, a, z0]), np.array([p.x + t, b, z1])
    return np.array([p.x + p.width - t, a, z0]), np.array([p.x + p.width, b, z1])


def _face_span(p: BuildingParams, face: Face) -> Tuple[float, float]:
    t = p.wall_thickness
    if face in (Face.NORTH, Face.SOUTH):
        return p.x + t, p.x + p.width - t
    return p.y + t, p.y + p.depth - t


def _check(p: BuildingParams, m: MapParams) -> None:
    res = m.resolution
    t = p.wall_thickness
    if t < res - 1e-9:
        raise BuildingError(msg=f"Wall thickness {t} is below the map resolution {res}.")
    if min(p.width, p.depth) < 2 * t + res:
        raise BuildingError(msg=f"Footprint {p.width} x {p.depth} leaves no interior.")
    if p.floor_height < t + res:
        raise BuildingError(msg=f"Floor height {p.floor_height} leaves no free space under the slab.")
    if p.x < 0 or p.y < 0 or p.x + p.width > m.size[0] or p.y + p.depth > m.size[1] or p.height > m.size[2]:
        raise BuildingError(msg="Building does not fit inside the map.")
    for o in p.openings:
        _check_opening(p, o)


def _check_opening(p: BuildingParams, o: Opening) -> None:
    if o.floor >= p.floors:
        raise BuildingError(msg=f"{o.kind.value} on floor {o.floor} of a {p.floors}-floor building.")
    lo, hi = _face_span(p, o.face)
    if o.center - o.width / 2 < lo - 1e-9 or o.center + o.width / 2 > hi + 1e-9:
        raise BuildingError(msg=f"{o.kind.value} at {o.center} does not fit on the {o.face.value} face.")
    if o.bottom < 0 or o.bottom + o.height > p.floor_height - p.wall_thickness + 1e-9:
        raise BuildingError(msg=f"{o.kind.value} on floor {o.floor} is taller than the floor.")


def _random_openings(p: BuildingParams, seed: int) -> Tuple[Opening, ...]:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0x6275696C,)))
    out = []
    faces = list(Face)
    width, height, sill = 1.0, 1.2, 1.0
    for _ in range(p.random_windows):
        face = faces[int(rng.integers(len(faces)))]
        floor = int(rng.integers(p.floors))
        lo, hi = _face_span(p, face)
        if hi - lo < width:
            continue
        center = float(rng.uniform(lo + width / 2, hi - width / 2))
        out.append(
            Opening(
                kind=OpeningKind.WINDOW,
                face=face,
                floor=floor,
                center=center,
                width=width,
                height=height,
                sill=sill,
            )
        )
    return tuple(out)


def generate_building(params: BuildingParams, seed: int = 0, map_params: Optional[MapParams] = None) -> VoxelGrid:
    """Voxelize a watertight shell with its declared openings onto a ground plane.

    Raises
    ------
    BuildingError
        Degenerate footprint, walls thinner than one voxel, a building larger than the map
        or an opening that does not fit its wall.
    """
    m = MapParams() if map_params is None else map_params
    _check(params, m)
    res = m.resolution
    origin = m.origin
    occupancy = np.zeros(m.dims, dtype=bool)
    occupancy[:, :, 0] = True

    p = params
    t = p.wall_thickness
    lower = np.array([p.x, p.y, 0.0])
    upper = np.array([p.x + p.width, p.y + p.depth, p.height])
    _box(occupancy, lower, upper, origin, res, True)
    for k in range(p.floors):
        z0 = k * p.floor_height
        _box(
            occupancy,
            [p.x + t, p.y + t, z0],
            [p.x + p.width - t, p.y + p.depth - t, z0 + p.floor_height - t],
            origin,
            res,
            False,
        )

    for o in p.openings + _random_openings(p, seed):
        lo, hi = _opening_box(p, o)
        _box(occupancy, lo, hi, origin, res, False)
    return VoxelGrid(occupancy, resolution=res, origin=origin)


def generate_random_map(dims, density: float, resolution: float = 1.0, seed: int = 0) -> VoxelGrid:
    """Uniform random occupancy, for planner benchmarks."""
    if not 0 <= density < 1:
        raise ValueError(f"density must lie in [0, 1); got {density}.")
    rng = np.random.default_rng(seed)
    occupancy = rng.random(tuple(int(d) for d in dims)) < density
    return VoxelGrid(occupancy, resolution=resolution)
