"""Leaf tasks of the fire mission trees, bound to one :class:`~ember.sim._agent.Agent`."""

import logging
import math
from typing import List, Optional

import numpy as np
from attrs import define, field

from ember.executive import Blackboard, BtNode, Status, TaskRuntime
from ember.mcl import Platform
from ember.sim._agent import Agent, Navigator, vantage_point
from ember.utils import to_vec3, wrap_angle

logger = logging.getLogger(__name__)

VERTICAL_SPEED = 1.0
TAKEOFF_TOLERANCE = 0.1
LAND_TOLERANCE = 0.15


def _point(node: BtNode, index: int = 1) -> np.ndarray:
    try:
        return to_vec3(node.args[index])
    except (IndexError, TypeError, ValueError):
        raise ValueError(f'"{node.task_id}" expects a 3-vector argument; got {node.args[1:]}.') from None


@define
class _AgentTask:
    agent: Agent

    def start(self, blackboard: Blackboard) -> None:
        pass

    def update(self, blackboard: Blackboard) -> Status:
        raise NotImplementedError

    def halt(self, blackboard: Blackboard) -> None:
        self.agent.stop()


@define
class NavigateTask(_AgentTask):
    goal: np.ndarray = field(factory=lambda: np.zeros(3))
    nav: Optional[Navigator] = None

    def start(self, blackboard: Blackboard) -> None:
        self.nav = Navigator(self.agent, self.goal)
        self.nav.plan()

    def update(self, blackboard: Blackboard) -> Status:
        assert self.nav is not None
        return self.nav.step()


@define
class ExploreTask(_AgentTask):
    """Visit ``waypoints`` in order; fails on the first unreachable one."""

    waypoints: List[np.ndarray] = field(factory=list)
    index: int = 0
    nav: Optional[Navigator] = None

    def start(self, blackboard: Blackboard) -> None:
        self.index = 0
        if self.waypoints:
            self._next()

    def _next(self) -> None:
        self.nav = Navigator(self.agent, self.waypoints[self.index])
        self.nav.plan()

    def update(self, blackboard: Blackboard) -> Status:
        if self.nav is None:
            return Status.SUCCESS
        status = self.nav.step()
        if status is not Status.SUCCESS:
            return status
        self.index += 1
        if self.index >= len(self.waypoints):
            return Status.SUCCESS
        self._next()
        return Status.RUNNING


@define
class VerticalTask(_AgentTask):
    """Climb or descend to ``target`` while holding the horizontal position."""

    target: np.ndarray = field(factory=lambda: np.zeros(3))
    tolerance: float = TAKEOFF_TOLERANCE

    def update(self, blackboard: Blackboard) -> Status:
        agent = self.agent
        if agent.platform is not Platform.UAV:
            return Status.SUCCESS
        here = agent.position
        goal = np.array([self.target[0], self.target[1], self.target[2]])
        if abs(goal[2] - here[2]) <= self.tolerance:
            agent.stop()
            return Status.SUCCESS
        agent.move_towards(goal, slow_down=True, speed=VERTICAL_SPEED)
        return Status.RUNNING


@define
class DetectFireTask(_AgentTask):
    """Succeeds once a confirmed fire in one of this robot's areas has been claimed."""

    def update(self, blackboard: Blackboard) -> Status:
        agent = self.agent
        fid = agent.fleet.claimable(agent.id, agent.position)
        if fid is None:
            return Status.RUNNING
        agent.fleet.claim(fid, agent.id)
        blackboard["fire"] = fid
        agent.log("claim", fid)
        return Status.SUCCESS

    def halt(self, blackboard: Blackboard) -> None:
        pass


@define
class FireConfirmedTask(_AgentTask):
    def update(self, blackboard: Blackboard) -> Status:
        fleet = self.agent.fleet
        fid = fleet.resolve(blackboard.get("fire"))
        if fid is None or fid in fleet.handled or fid not in fleet.confirmed():
            return Status.FAILURE
        blackboard["fire"] = fid
        return Status.SUCCESS


@define
class ApproachFireTask(_AgentTask):
    """Navigate to a free vantage point ``standoff`` away from the claimed fire."""

    nav: Optional[Navigator] = None

    def start(self, blackboard: Blackboard) -> None:
        agent = self.agent
        self.nav = None
        fid = agent.fleet.resolve(blackboard.get("fire"))
        target = None if fid is None else agent.fleet.estimate(fid)
        if target is None:
            return
        vantage = vantage_point(agent, target, agent.extinguish.standoff)
        if vantage is None:
            agent.log("plan_failed", f"no vantage point near {fid}")
            return
        blackboard["vantage"] = vantage
        self.nav = Navigator(agent, vantage)
        self.nav.plan()

    def update(self, blackboard: Blackboard) -> Status:
        if self.nav is None:
            return Status.FAILURE
        return self.nav.step()


@define
class ExtinguishTask(_AgentTask):
    """Face the fire and discharge until it is out or ``give_up`` seconds have passed."""

    elapsed: int = 0

    def start(self, blackboard: Blackboard) -> None:
        self.elapsed = 0

    def update(self, blackboard: Blackboard) -> Status:
        agent = self.agent
        fleet = agent.fleet
        fid = fleet.resolve(blackboard.get("fire"))
        target = None if fid is None else fleet.estimate(fid)
        if fid is None or target is None:
            return Status.FAILURE
        self.elapsed += 1
        if self.elapsed * agent.dt > agent.extinguish.give_up:
            agent.log("extinguish_failed", fid)
            return Status.FAILURE
        agent.face(target)
        if heading_error(agent, target) > agent.extinguish.aim_tolerance:
            return Status.RUNNING
        out = agent.actuator.discharge(agent.id, agent.tick)
        if out is None:
            return Status.RUNNING
        fleet.mark_handled(fid)
        agent.stop()
        return Status.SUCCESS


def register_mission_tasks(runtime: TaskRuntime, agent: Agent) -> TaskRuntime:
    """Bind a factory for every mission task id to ``agent``."""
    runtime.register("navigate", lambda node: NavigateTask(agent, _point(node)))
    runtime.register("navigate_home", lambda node: NavigateTask(agent, _point(node)))
    runtime.register("explore", lambda node: ExploreTask(agent, [to_vec3(a) for a in node.args[1:]]))
    runtime.register("takeoff", lambda node: VerticalTask(agent, _point(node), TAKEOFF_TOLERANCE))
    runtime.register("land", lambda node: VerticalTask(agent, _point(node), LAND_TOLERANCE))
    runtime.register("detect_fire", lambda node: DetectFireTask(agent))
    runtime.register("fire_confirmed", lambda node: FireConfirmedTask(agent))
    runtime.register("approach_fire", lambda node: ApproachFireTask(agent))
    runtime.register("extinguish", lambda node: ExtinguishTask(agent))
    return runtime


def heading_error(agent: Agent, point) -> float:
    d = np.asarray(point, dtype=np.float64) - agent.position
    return abs(wrap_angle(math.atan2(d[1], d[0]) - agent.pose.yaw))
