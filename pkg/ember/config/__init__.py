__all__ = [
    "ConfigFromFile",
    "Env",
    "Schema",
    "Toml",
]

from ember.config._common import ConfigFromFile, Schema, Toml
from ember.config._env import Env
