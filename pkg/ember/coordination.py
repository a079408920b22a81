"""Priority-based zone deconfliction for the fleet.

A UAV may enter a zone unless a strictly higher-priority UAV occupies it (lower number is higher
priority). Ground robots never block and are never blocked. Waiters are re-evaluated by
:meth:`ZoneRegistry.poll` once per tick in priority order.
"""

import csv
import logging
import threading
from collections import deque
from enum import Enum
from pathlib import Path
from typing import Deque, Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple, Union

import numpy as np
from attrs import define, field, frozen

from ember.exceptions import UnknownRobotError, UnknownZoneError, ZoneNotHeldError
from ember.mcl import Platform
from ember.utils import to_vec3
from ember.validators import Number

__all__ = [
    "Allocation",
    "Area",
    "AreaKind",
    "COORDINATION_COLUMNS",
    "CoordinationEvent",
    "Decision",
    "FleetState",
    "MessageDelayShim",
    "RobotInfo",
    "RobotState",
    "Zone",
    "ZoneRegistry",
    "assign_tasks",
    "count_violations",
    "read_events",
]

logger = logging.getLogger(__name__)

COORDINATION_COLUMNS = ("tick", "robot", "zone", "event")


class Decision(str, Enum):
    GRANTED = "granted"
    WAIT = "wait"


class EventKind(str, Enum):
    REQUEST = "request"
    GRANT = "grant"
    WAIT = "wait"
    RELEASE = "release"


@frozen(eq=False)
class Zone:
    """Axis-aligned volume in the map frame."""

    id: str
    lower: np.ndarray = field(converter=to_vec3)
    upper: np.ndarray = field(converter=to_vec3)
    may_overlap: bool = field(default=False, kw_only=True)
    """Overlap with other zones is allowed only when flagged."""

    def __attrs_post_init__(self):
        if np.any(self.upper <= self.lower):
            raise ValueError(f'Zone "{self.id}" has an empty volume.')

    def contains(self, position) -> bool:
        p = to_vec3(position)
        return bool(np.all(p >= self.lower) and np.all(p <= self.upper))

    def overlaps(self, other: "Zone") -> bool:
        return bool(np.all(self.lower < other.upper) and np.all(other.lower < self.upper))


@frozen
class RobotInfo:
    id: str
    platform: Platform = field(converter=Platform)
    priority: int = field(validator=Number(gte=0))


@frozen
class RobotState:
    id: str
    platform: Platform
    priority: int
    zone: Optional[str]
    altitude_band: Optional[int]


@frozen
class FleetState:
    """Immutable snapshot of every registered robot, sorted by id."""

    robots: Tuple[RobotState, ...]

    def __getitem__(self, robot: str) -> RobotState:
        for r in self.robots:
            if r.id == robot:
                return r
        raise UnknownRobotError(robot=robot)

    def occupants(self, zone: str) -> Tuple[str, ...]:
        return tuple(r.id for r in self.robots if r.zone == zone)


@frozen
class CoordinationEvent:
    tick: int
    robot: str
    zone: str
    event: EventKind = field(converter=EventKind)

    def as_tuple(self) -> Tuple[int, str, str, str]:
        return (self.tick, self.robot, self.zone, self.event.value)


@define
class ZoneRegistry:
    """Authoritative occupancy registry; every operation runs under one lock.

    Parameters
    ----------
    zones: Iterable[Zone]
        Declared zones; two zones may only overlap when one of them sets ``may_overlap``.
    """

    zones: Dict[str, Zone] = field(converter=lambda zs: {z.id: z for z in zs})
    robots: Dict[str, RobotInfo] = field(factory=dict)
    events: List[CoordinationEvent] = field(factory=list)
    _held: Dict[str, str] = field(factory=dict, init=False, repr=False)
    _waiting: Dict[Tuple[str, str], int] = field(factory=dict, init=False, repr=False)
    _bands: Dict[str, Optional[int]] = field(factory=dict, init=False, repr=False)
    _lock: threading.RLock = field(factory=threading.RLock, init=False, repr=False)

    def __attrs_post_init__(self):
        ids = sorted(self.zones)
        for i, a in enumerate(ids):
            for b in ids[i + 1 :]:
                za, zb = self.zones[a], self.zones[b]
                if za.overlaps(zb) and not (za.may_overlap or zb.may_overlap):
                    raise ValueError(f'Zones "{a}" and "{b}" overlap without being flagged.')

    def register(self, robot: RobotInfo, altitude_band: Optional[int] = None) -> None:
        with self._lock:
            if robot.platform is Platform.UAV:
                for other in self.robots.values():
                    if other.id != robot.id and other.platform is Platform.UAV and other.priority == robot.priority:
                        raise ValueError(f'UAVs "{other.id}" and "{robot.id}" share priority {robot.priority}.')
            self.robots[robot.id] = robot
            self._bands[robot.id] = altitude_band

    def _robot(self, robot: str) -> RobotInfo:
        try:
            return self.robots[robot]
        except KeyError:
            raise UnknownRobotError(robot=robot) from None

    def _zone(self, zone: str) -> Zone:
        try:
            return self.zones[zone]
        except KeyError:
            raise UnknownZoneError(zone=zone) from None

    def _log(self, tick: int, robot: str, zone: str, kind: EventKind) -> None:
        self.events.append(CoordinationEvent(tick, robot, zone, kind))

    def _blocked(self, info: RobotInfo, zone: str) -> bool:
        if info.platform is not Platform.UAV:
            return False
        for rid, held in self._held.items():
            other = self.robots[rid]
            if held == zone and rid != info.id and other.platform is Platform.UAV and other.priority < info.priority:
                return True
        return False

    def _grant(self, info: RobotInfo, zone: str, tick: int) -> None:
        self._held[info.id] = zone
        self._waiting.pop((info.id, zone), None)
        self._log(tick, info.id, zone, EventKind.GRANT)
        logger.debug("tick %d: %s entered %s", tick, info.id, zone)

    def request_enter(self, robot: str, zone: str, tick: int = 0) -> Decision:
        """Grant ``zone`` unless a strictly higher-priority UAV occupies it.

        The check and the occupancy record happen under the same lock. A robot holds at most
        one zone; entering a new zone while holding another raises ``ValueError``.
        """
        with self._lock:
            info = self._robot(robot)
            self._zone(zone)
            held = self._held.get(robot)
            if held == zone:
                return Decision.GRANTED
            if held is not None:
                raise ValueError(f'Robot "{robot}" must release "{held}" before entering "{zone}".')
            first = (robot, zone) not in self._waiting
            if first:
                self._log(tick, robot, zone, EventKind.REQUEST)
            if self._blocked(info, zone):
                if first:
                    self._waiting[(robot, zone)] = tick
                    self._log(tick, robot, zone, EventKind.WAIT)
                return Decision.WAIT
            self._grant(info, zone, tick)
            return Decision.GRANTED

    def cancel(self, robot: str, zone: str) -> None:
        """Withdraw a pending request; no-op if the robot was not waiting."""
        with self._lock:
            self._waiting.pop((robot, zone), None)

    def release(self, robot: str, zone: str, tick: int = 0) -> FleetState:
        with self._lock:
            self._robot(robot)
            self._zone(zone)
            if self._held.get(robot) != zone:
                raise ZoneNotHeldError(robot=robot, zone=zone)
            del self._held[robot]
            self._log(tick, robot, zone, EventKind.RELEASE)
            return self.state()

    def poll(self, tick: int) -> List[Tuple[str, str]]:
        """Re-evaluate waiters in priority order; returns the ``(robot, zone)`` pairs granted."""
        granted = []
        with self._lock:
            order = sorted(self._waiting, key=lambda rz: (self.robots[rz[0]].priority, rz[0], rz[1]))
            for robot, zone in order:
                if robot in self._held:
                    continue
                info = self.robots[robot]
                if not self._blocked(info, zone):
                    self._grant(info, zone, tick)
                    granted.append((robot, zone))
        return granted

    def is_waiting(self, robot: str, zone: str) -> bool:
        with self._lock:
            return (robot, zone) in self._waiting

    def holder_zone(self, robot: str) -> Optional[str]:
        with self._lock:
            return self._held.get(robot)

    def zone_of(self, position) -> Optional[str]:
        """Id of the first zone (by id) containing ``position``."""
        for zid in sorted(self.zones):
            if self.zones[zid].contains(position):
                return zid
        return None

    def state(self) -> FleetState:
        with self._lock:
            return FleetState(
                tuple(
                    RobotState(r.id, r.platform, r.priority, self._held.get(r.id), self._bands.get(r.id))
                    for r in sorted(self.robots.values(), key=lambda r: r.id)
                )
            )

    def write_events(self, file: Union[str, Path]) -> None:
        with Path(file).open("w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(COORDINATION_COLUMNS)
            writer.writerows(e.as_tuple() for e in self.events)


def read_events(file: Union[str, Path]) -> List[CoordinationEvent]:
    with Path(file).open(newline="") as f:
        return [
            CoordinationEvent(int(row["tick"]), row["robot"], row["zone"], row["event"]) for row in csv.DictReader(f)
        ]


def count_violations(events: Iterable[CoordinationEvent], robots: Mapping[str, RobotInfo]) -> int:
    """Replay ``events`` and count grants that broke the priority rule or double occupancy.

    A violation is a UAV granted a zone while a strictly higher-priority UAV held it, or a
    grant/release that does not match the replayed occupancy.
    """
    held: Dict[str, str] = {}
    violations = 0
    for e in events:
        info = robots[e.robot]
        if e.event is EventKind.GRANT:
            if e.robot in held:
                violations += 1
            if info.platform is Platform.UAV:
                for rid, zone in held.items():
                    other = robots[rid]
                    if zone == e.zone and other.platform is Platform.UAV and other.priority < info.priority:
                        violations += 1
            held[e.robot] = e.zone
        elif e.event is EventKind.RELEASE:
            if held.get(e.robot) != e.zone:
                violations += 1
            held.pop(e.robot, None)
    return violations


@define
class MessageDelayShim:
    """Delivers requests and releases to ``registry`` ``delay_ticks`` ticks after they were sent.

    Decisions become visible to the sender once the message was delivered.
    """

    registry: ZoneRegistry
    delay_ticks: int = field(default=0, validator=Number(gte=0))
    _queue: Deque[Tuple[int, str, str, str]] = field(factory=deque, init=False, repr=False)
    _decisions: Dict[Tuple[str, str], Decision] = field(factory=dict, init=False, repr=False)

    def request_enter(self, robot: str, zone: str, tick: int) -> Optional[Decision]:
        """Queue a request; returns the last delivered decision for ``(robot, zone)`` if any."""
        self._queue.append((tick + self.delay_ticks, "request", robot, zone))
        self.deliver(tick)
        return self._decisions.get((robot, zone))

    def release(self, robot: str, zone: str, tick: int) -> None:
        self._queue.append((tick + self.delay_ticks, "release", robot, zone))
        self.deliver(tick)

    def deliver(self, tick: int) -> None:
        while self._queue and self._queue[0][0] <= tick:
            _, kind, robot, zone = self._queue.popleft()
            if kind == "request":
                self._decisions[(robot, zone)] = self.registry.request_enter(robot, zone, tick)
            else:
                self.registry.release(robot, zone, tick)
                self._decisions.pop((robot, zone), None)

    def poll(self, tick: int) -> List[Tuple[str, str]]:
        self.deliver(tick)
        granted = self.registry.poll(tick)
        for key in granted:
            self._decisions[key] = Decision.GRANTED
        return granted

    def decision(self, robot: str, zone: str) -> Optional[Decision]:
        return self._decisions.get((robot, zone))


###################
# Task allocation #
###################


class AreaKind(str, Enum):
    OUTDOOR = "outdoor"
    FLOOR_INDOOR = "indoor"
    FLOOR_FACADE = "facade"


@frozen
class Area:
    kind: AreaKind = field(converter=AreaKind)
    floor: Optional[int] = None

    def __attrs_post_init__(self):
        if (self.kind is AreaKind.OUTDOOR) != (self.floor is None):
            raise ValueError("Only floor areas carry a floor index.")

    def __str__(self):
        if self.floor is None:
            return self.kind.value
        return f"floor-{self.floor}-{self.kind.value}"

    @classmethod
    def parse(cls, text: str) -> "Area":
        if text == AreaKind.OUTDOOR.value:
            return cls(AreaKind.OUTDOOR)
        parts = text.split("-")
        if len(parts) != 3 or parts[0] != "floor":
            raise ValueError(f'Invalid area "{text}".')
        return cls(AreaKind(parts[2]), int(parts[1]))


def _sort_key(area: Area):
    return (-1 if area.floor is None else area.floor, area.kind.value)


@frozen
class Allocation:
    assignments: Dict[str, Tuple[Area, ...]]
    unassigned: Tuple[Area, ...]

    def owner(self, area: Area) -> Optional[str]:
        for robot, areas in self.assignments.items():
            if area in areas:
                return robot
        return None

    @property
    def unassigned_floors(self) -> Tuple[int, ...]:
        return tuple(sorted({a.floor for a in self.unassigned if a.floor is not None}))


def assign_tasks(n_floors: int, fleet: Sequence[RobotInfo]) -> Allocation:
    """Static role-based allocation.

    The first ground robot (by id) takes the ground-floor interior. The highest-priority UAV takes
    the outdoor area and the ground-floor facade; the next UAVs, in priority order, take floors
    ``1..n_floors-1`` (interior and facade). Areas without a robot are reported in ``unassigned``.
    The result does not depend on the order of ``fleet``.
    """
    if n_floors < 1:
        raise ValueError("A building has at least one floor.")
    ugvs = sorted((r for r in fleet if r.platform is Platform.UGV), key=lambda r: r.id)
    uavs = sorted((r for r in fleet if r.platform is Platform.UAV), key=lambda r: (r.priority, r.id))

    areas = [Area(AreaKind.OUTDOOR)]
    for k in range(n_floors):
        areas.append(Area(AreaKind.FLOOR_INDOOR, k))
        areas.append(Area(AreaKind.FLOOR_FACADE, k))

    assignments: Dict[str, List[Area]] = {r.id: [] for r in sorted(fleet, key=lambda r: r.id)}
    if ugvs:
        assignments[ugvs[0].id].append(Area(AreaKind.FLOOR_INDOOR, 0))
    if uavs:
        assignments[uavs[0].id] += [Area(AreaKind.OUTDOOR), Area(AreaKind.FLOOR_FACADE, 0)]
        for floor, uav in enumerate(uavs[1:n_floors], start=1):
            assignments[uav.id] += [Area(AreaKind.FLOOR_INDOOR, floor), Area(AreaKind.FLOOR_FACADE, floor)]

    taken: Set[Area] = {a for v in assignments.values() for a in v}
    unassigned = tuple(sorted((a for a in areas if a not in taken), key=_sort_key))
    if unassigned:
        logger.info("Unassigned areas: %s", ", ".join(str(a) for a in unassigned))
    return Allocation({k: tuple(sorted(v, key=_sort_key)) for k, v in assignments.items()}, unassigned)
