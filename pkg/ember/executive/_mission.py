from typing import Iterable, Sequence, Union

import numpy as np

from ember.executive._nodes import BtNode, force_success, leaf, parallel, retry, sequence, timeout
from ember.mcl import Platform
from ember.utils import to_vec3
from ember.world_model import Pose

#: Task ids the mission trees use; the simulator registers a factory for each.
MISSION_TASKS = (
    "takeoff",
    "land",
    "explore",
    "detect_fire",
    "fire_confirmed",
    "approach_fire",
    "extinguish",
    "navigate",
    "navigate_home",
)


def _vector(p) -> tuple:
    return tuple(float(v) for v in to_vec3(p))


def build_fire_mission_tree(
    role: Union[Platform, str],
    waypoints: Iterable[Sequence[float]],
    home: Union[Pose, Sequence[float], np.ndarray],
    *,
    cruise_altitude: float = 0.0,
    timeout_ticks: int = 2400,
    attempts: int = 3,
) -> BtNode:
    """Build the explore, detect, approach, extinguish, return-home mission.

    The mission body runs inside ``ForceSuccess{Timeout}`` so that the return-home leaf that
    follows it executes whatever the body returned. Inside the timeout the engagement is retried:
    a lap that ends without a claimed fire, or an approach or discharge that fails, starts
    another lap over the same waypoints.

    Parameters
    ----------
    role: Platform
        UAVs additionally take off to ``cruise_altitude`` above ``home`` first and land at the end.
    waypoints: Iterable[Sequence[float]]
        Ordered exploration waypoints in map coordinates.
    home: Pose | Sequence[float]
        Home position.
    cruise_altitude: float
        Flight height of UAVs between takeoff and landing; ignored for UGVs.
    timeout_ticks: int
        Tick budget of the mission body.
    attempts: int
        Laps over the waypoints before the body gives up.
    """
    role = Platform(role)
    wps = [_vector(w) for w in waypoints]
    if not wps:
        raise ValueError("A mission needs at least one exploration waypoint.")
    home_vec = _vector(home.position if isinstance(home, Pose) else home)

    body = force_success(
        timeout(
            timeout_ticks,
            retry(
                attempts,
                sequence(
                    parallel(1, leaf("explore", *wps), leaf("detect_fire")),
                    leaf("fire_confirmed"),
                    leaf("approach_fire"),
                    leaf("extinguish"),
                ),
            ),
        )
    )

    if role is Platform.UGV:
        return sequence(body, leaf("navigate_home", home_vec))

    aloft = (home_vec[0], home_vec[1], float(cruise_altitude))
    return sequence(
        leaf("takeoff", aloft),
        body,
        leaf("navigate_home", aloft),
        leaf("land", home_vec),
    )
