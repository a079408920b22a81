from pathlib import Path
from textwrap import dedent

import numpy as np
import pytest
from rich.console import Console

from ember.world_model import VoxelGrid


@pytest.fixture
def console():
    return Console(width=70, force_terminal=True, highlight=False, color_system=None, legacy_windows=False)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def empty_grid():
    """10x10x4 free volume at 1 m resolution."""
    return VoxelGrid.empty((10, 10, 4), 1.0)


@pytest.fixture
def wall_grid():
    """10x10x4 at 1 m with a full-height wall plane at x in [5, 6)."""
    occupancy = np.zeros((10, 10, 4), dtype=bool)
    occupancy[5, :, :] = True
    return VoxelGrid(occupancy, resolution=1.0)


@pytest.fixture
def write_scenario(tmp_path):
    """Write dedented TOML into ``tmp_path / name`` and return its path."""

    def inner(text: str, name: str = "scenario.toml") -> Path:
        path = tmp_path / name
        path.write_text(dedent(text))
        return path

    return inner
