# Don't manually change, let poetry-dynamic-versioning handle it.
__version__ = "0.0.0"

__all__ = [
    "EmberError",
    "Pose",
    "VoxelGrid",
    "config",
    "coordination",
    "executive",
    "fire_estimation",
    "mcl",
    "planner",
    "sim",
    "validators",
    "world_model",
]

from ember.exceptions import EmberError
from ember.world_model import Pose, VoxelGrid

from . import config, coordination, executive, fire_estimation, mcl, planner, sim, validators, world_model
