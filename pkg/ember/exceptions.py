from typing import Any, Optional, Tuple

from attrs import define, field

__all__ = [
    "BuildingError",
    "DegenerateWeightsError",
    "EmberError",
    "EmptyCloudError",
    "EmptyMapError",
    "FilterDivergenceError",
    "MapFormatError",
    "OccupiedEndpointError",
    "OutOfBoundsError",
    "ScenarioError",
    "SingularCovarianceError",
    "TreeParseError",
    "TreeStructureError",
    "UnknownKeyError",
    "UnknownRobotError",
    "UnknownZoneError",
    "UnreachableError",
    "ZoneNotHeldError",
    "format_ember_error",
]


@define(kw_only=True)
class EmberError(Exception):
    """Root exception for runtime errors.

    Subclasses carry structured fields and build their message in ``__str__``.
    :func:`ember.exceptions.format_ember_error` formats the message nicely for the user.
    """

    msg: Optional[str] = None
    """
    If set, override automatic message generation.
    """

    def __str__(self):
        return self.msg or ""


################
# World model. #
################


@define(kw_only=True)
class EmptyMapError(EmberError):
    """An operation needs at least one occupied voxel."""

    def __str__(self):
        return self.msg or "Map contains no occupied voxels."


@define(kw_only=True)
class OutOfBoundsError(EmberError):
    """A position lies outside of the map volume."""

    position: Tuple[float, ...] = field(factory=tuple, converter=tuple)

    def __str__(self):
        if self.msg:
            return self.msg
        coords = ", ".join(f"{float(c):.3f}" for c in self.position)
        return f"Position ({coords}) is outside of the map."


@define(kw_only=True)
class MapFormatError(EmberError):
    """A map file could not be decoded."""

    path: Any = None

    def __str__(self):
        where = f' in "{self.path}"' if self.path is not None else ""
        return f"Malformed map{where}: {self.msg}"


#############
# Estimates #
#############


@define(kw_only=True)
class EmptyCloudError(EmberError):
    """Map weighting was requested with no LIDAR points."""

    def __str__(self):
        return self.msg or "Point cloud is empty; skip the map weighting step."


@define(kw_only=True)
class FilterDivergenceError(EmberError):
    """Every fused particle weight is zero."""

    def __str__(self):
        return self.msg or "All particle weights collapsed to zero."


@define(kw_only=True)
class DegenerateWeightsError(EmberError):
    """Resampling was requested from weights that do not form a distribution."""

    def __str__(self):
        return self.msg or "Cannot resample from degenerate weights."


@define(kw_only=True)
class SingularCovarianceError(EmberError):
    """A measurement covariance cannot be inverted."""

    def __str__(self):
        return self.msg or "Measurement covariance is singular."


############
# Planning #
############


@define(kw_only=True)
class OccupiedEndpointError(EmberError):
    """The start or goal of a plan is not in free space."""

    which: str = "start"
    position: Tuple[float, ...] = field(factory=tuple, converter=tuple)

    def __str__(self):
        if self.msg:
            return self.msg
        coords = ", ".join(f"{float(c):.3f}" for c in self.position)
        return f"Plan {self.which} ({coords}) is occupied or outside of the map."


@define(kw_only=True)
class UnreachableError(EmberError):
    """No collision-free path connects start and goal."""

    start: Tuple[float, ...] = field(factory=tuple, converter=tuple)
    goal: Tuple[float, ...] = field(factory=tuple, converter=tuple)

    def __str__(self):
        if self.msg:
            return self.msg
        start = ", ".join(f"{float(c):.3f}" for c in self.start)
        goal = ", ".join(f"{float(c):.3f}" for c in self.goal)
        return f"No path from ({start}) to ({goal})."


#############
# Executive #
#############


@define(kw_only=True)
class TreeStructureError(EmberError):
    """A behavior tree node violates the arity rules of its kind."""

    def __str__(self):
        return self.msg or "Invalid behavior tree."


@define(kw_only=True)
class TreeParseError(EmberError):
    """Tree description text could not be parsed."""

    line: int = 0
    """1-indexed line of the offending token."""

    def __str__(self):
        return f"Line {self.line}: {self.msg}"


################
# Coordination #
################


@define(kw_only=True)
class UnknownZoneError(EmberError):
    zone: str = ""

    def __str__(self):
        return self.msg or f'Unknown zone "{self.zone}".'


@define(kw_only=True)
class UnknownRobotError(EmberError):
    robot: str = ""

    def __str__(self):
        return self.msg or f'Unknown robot "{self.robot}".'


@define(kw_only=True)
class ZoneNotHeldError(EmberError):
    """A robot released a zone it does not occupy."""

    robot: str = ""
    zone: str = ""

    def __str__(self):
        return self.msg or f'Robot "{self.robot}" does not hold zone "{self.zone}".'


#################
# Configuration #
#################


@define(kw_only=True)
class ScenarioError(EmberError):
    """A scenario failed pre-flight validation."""

    source: Any = None

    def __str__(self):
        where = f'"{self.source}": ' if self.source is not None else ""
        return f"{where}{self.msg}"


@define(kw_only=True)
class UnknownKeyError(ScenarioError):
    """A scenario file contains a section or key that is not part of the schema."""

    key: str = ""

    def __str__(self):
        where = f'"{self.source}": ' if self.source is not None else ""
        return f'{where}Unknown key "{self.key}".'


@define(kw_only=True)
class BuildingError(EmberError):
    """Building parameters do not describe a realizable shell."""

    def __str__(self):
        return self.msg or "Degenerate building parameters."


def format_ember_error(e: Any):
    from rich import box
    from rich.panel import Panel
    from rich.text import Text

    panel = Panel(
        Text(str(e), "default"),
        title="Error",
        box=box.ROUNDED,
        expand=True,
        title_align="left",
        style="red",
    )
    return panel
