from typing import Dict, List, Optional, Set

import numpy as np
from attrs import define, field

from ember.coordination import Allocation, Area, AreaKind, ZoneRegistry
from ember.fire_estimation import FireMeasurement, FireTracker
from ember.sim._building import BuildingLayout

#: Estimates horizontally closer than this to a wall are classified by where they were seen from.
WALL_AMBIGUITY = 0.5

_PROBES = [sign * WALL_AMBIGUITY * axis for axis in np.eye(3)[:2] for sign in (1.0, -1.0)]


@define
class Fleet:
    """What the robots share over the network: zone registry, fire beliefs and fire claims.

    Nothing in here is ground truth.
    """

    registry: ZoneRegistry
    allocation: Allocation
    tracker: FireTracker
    layout: Optional[BuildingLayout] = None
    min_measurements: int = 3
    votes: Dict[str, List[int]] = field(factory=dict)
    """``fire id -> [seen from inside, seen from outside]``."""

    claims: Dict[str, str] = field(factory=dict)
    handled: Set[str] = field(factory=set)
    aliases: Dict[str, str] = field(factory=dict)

    def report(self, m: FireMeasurement, tick: int, observer_inside: bool) -> str:
        fid = self.tracker.observe(m, tick)
        counts = self.votes.setdefault(fid, [0, 0])
        counts[0 if observer_inside else 1] += 1
        return fid

    def consolidate(self) -> None:
        for kept, absorbed in self.tracker.consolidate():
            a = self.votes.pop(absorbed, [0, 0])
            k = self.votes.setdefault(kept, [0, 0])
            k[0] += a[0]
            k[1] += a[1]
            self.aliases[absorbed] = kept
            if absorbed in self.handled:
                self.handled.add(kept)
            if absorbed in self.claims and kept not in self.claims:
                self.claims[kept] = self.claims[absorbed]
            self.claims.pop(absorbed, None)

    def resolve(self, fid: Optional[str]) -> Optional[str]:
        """Follow merges; ``None`` when the fire is unknown."""
        while fid is not None and fid in self.aliases:
            fid = self.aliases[fid]
        if fid is None or fid not in self.tracker.beliefs:
            return None
        return fid

    def estimate(self, fid: str) -> Optional[np.ndarray]:
        belief = self.tracker.beliefs.get(fid)
        return None if belief is None else belief.estimate()

    def area_of(self, fid: str) -> Optional[Area]:
        """Allocation area of a fire.

        The estimate decides indoor versus outdoor unless it lies within ``WALL_AMBIGUITY`` of a wall;
        there the majority of observer positions (inside or outside the building) decides.
        """
        mean = self.estimate(fid)
        if mean is None:
            return None
        if self.layout is None:
            return Area(AreaKind.OUTDOOR)
        indoor = self.layout.interior(mean)
        inside, outside = self.votes.get(fid, [0, 0])
        if inside + outside and any(self.layout.interior(mean + offset) != indoor for offset in _PROBES):
            indoor = inside > outside
        return self.layout.area_of(mean, indoor=indoor)

    def confirmed(self) -> List[str]:
        return sorted(self.tracker.confirmed(self.min_measurements))

    def claimable(self, robot: str, position) -> Optional[str]:
        """Nearest confirmed, unhandled fire in ``robot``'s areas not claimed by someone else."""
        mine = set(self.allocation.assignments.get(robot, ()))
        best = None
        for fid in self.confirmed():
            if fid in self.handled or self.claims.get(fid, robot) != robot:
                continue
            if self.area_of(fid) not in mine:
                continue
            mean = self.estimate(fid)
            assert mean is not None
            d = float(np.linalg.norm(mean - np.asarray(position)))
            if best is None or (d, fid) < best:
                best = (d, fid)
        return None if best is None else best[1]

    def claim(self, fid: str, robot: str) -> None:
        self.claims[fid] = robot

    def mark_handled(self, fid: str) -> None:
        self.handled.add(fid)
        self.claims.pop(fid, None)
