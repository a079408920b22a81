import csv
import json
import math

import numpy as np
import pytest
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from ember.exceptions import OccupiedEndpointError, UnreachableError
from ember.planner import (
    Algorithm,
    Mode,
    Path,
    PlanRequest,
    benchmark,
    export_path_csv,
    inflate,
    plan,
    plan_a_star,
    plan_lazy_theta_star,
    plan_theta_star,
    planning_map,
    validate_and_replan,
    write_benchmark,
)
from ember.world_model import VoxelGrid, line_of_sight


def _flat(dims=(10, 10), resolution=1.0, cells=()):
    occupancy = np.zeros((*dims, 1), dtype=bool)
    for c in cells:
        occupancy[c[0], c[1], 0] = True
    return VoxelGrid(occupancy, resolution=resolution)


def _collision_free(path: Path, grid: VoxelGrid, step: float = 0.02) -> bool:
    for a, b in zip(path.waypoints[:-1], path.waypoints[1:]):
        n = max(2, int(math.ceil(np.linalg.norm(b - a) / step)))
        for t in np.linspace(0.0, 1.0, n):
            if not grid.is_free(a + t * (b - a)):
                return False
    return True


def test_plan_free_space_straight_line():
    req = PlanRequest(start=(0.5, 0.5, 0.5), goal=(3.5, 4.5, 0.5), map=_flat(), mode=Mode.TWO_D)
    path = plan_lazy_theta_star(req)
    assert path.total_length == pytest.approx(5.0, abs=1e-9)
    assert len(path.waypoints) == 2
    assert path.los_checks_performed == 1
    assert path.algorithm is Algorithm.LAZY_THETA


def test_plan_a_star_octile():
    req = PlanRequest(start=(0.5, 0.5, 0.5), goal=(3.5, 4.5, 0.5), map=_flat(), mode=Mode.TWO_D)
    path = plan_a_star(req)
    assert path.total_length == pytest.approx(3 * math.sqrt(2) + 1, abs=1e-9)
    assert path.los_checks_performed == 0


def test_plan_keeps_exact_endpoints():
    req = PlanRequest(start=(0.2, 0.3, 0.5), goal=(7.9, 2.1, 0.5), map=_flat(cells=[(4, 0), (4, 1), (4, 2)]))
    path = plan(req)
    np.testing.assert_array_equal(path.start, [0.2, 0.3, 0.5])
    np.testing.assert_array_equal(path.goal, [7.9, 2.1, 0.5])


def test_plan_two_d_pins_goal_height():
    grid = VoxelGrid.empty((6, 6, 4), 1.0)
    req = PlanRequest(start=(0.5, 0.5, 1.5), goal=(5.5, 5.5, 3.5), map=grid, mode=Mode.TWO_D)
    path = plan(req)
    np.testing.assert_array_equal(path.waypoints[:, 2], 1.5)


def test_plan_wall_gap_near_optimal():
    occupancy = np.zeros((80, 80, 1), dtype=bool)
    occupancy[40, :, 0] = True
    occupancy[40, 56:60, 0] = False
    grid = VoxelGrid(occupancy, resolution=0.25)
    req = PlanRequest(start=(1.125, 1.125, 0.125), goal=(18.875, 1.125, 0.125), map=grid, mode=Mode.TWO_D)

    # Continuous shortest path wraps the two lower corners of the gap.
    corner_in, corner_out = np.array([10.0, 14.0]), np.array([10.25, 14.0])
    optimum = (
        np.linalg.norm(corner_in - [1.125, 1.125])
        + np.linalg.norm(corner_out - corner_in)
        + np.linalg.norm([18.875, 1.125] - corner_out)
    )

    lazy = plan_lazy_theta_star(req)
    a_star = plan_a_star(req)
    assert optimum - 1e-9 <= lazy.total_length <= 1.02 * optimum
    assert lazy.total_length <= a_star.total_length + 1e-9
    assert _collision_free(lazy, grid)


def test_plan_sealed_room():
    cells = [(x, y) for x in range(2, 7) for y in range(2, 7) if x in (2, 6) or y in (2, 6)]
    req = PlanRequest(start=(0.5, 0.5, 0.5), goal=(4.5, 4.5, 0.5), map=_flat(cells=cells), mode=Mode.TWO_D)
    for algorithm in Algorithm:
        with pytest.raises(UnreachableError):
            plan(req, algorithm)


@pytest.mark.parametrize("which", ["start", "goal"])
def test_plan_occupied_endpoint(which):
    endpoints = {"start": (0.5, 0.5, 0.5), "goal": (8.5, 8.5, 0.5)}
    endpoints[which] = (4.5, 4.5, 0.5)
    req = PlanRequest(map=_flat(cells=[(4, 4)]), **endpoints)
    with pytest.raises(OccupiedEndpointError, match=which):
        plan(req)


def test_plan_endpoint_inside_inflation():
    req = PlanRequest(start=(3.5, 4.5, 0.5), goal=(8.5, 8.5, 0.5), map=_flat(cells=[(4, 4)]), inflation_radius=1.0)
    with pytest.raises(OccupiedEndpointError):
        plan(req)


def test_plan_same_cell():
    req = PlanRequest(start=(0.2, 0.2, 0.5), goal=(0.8, 0.8, 0.5), map=_flat())
    path = plan(req, "astar")
    assert len(path.waypoints) == 2
    assert path.expansions == 0


def test_plan_deterministic(rng):
    grid = VoxelGrid(rng.random((20, 20, 1)) < 0.2, resolution=0.5)
    free = np.argwhere(~grid.occupancy)
    req = PlanRequest(start=grid.index_to_world(free[0]), goal=grid.index_to_world(free[-1]), map=grid)
    try:
        first = plan(req)
    except UnreachableError:
        pytest.skip("random map has no path")
    second = plan(req)
    assert first == second
    assert first.waypoints.tobytes() == second.waypoints.tobytes()


def test_plan_three_d_climbs_over():
    occupancy = np.zeros((10, 4, 5), dtype=bool)
    occupancy[5, :, :3] = True
    grid = VoxelGrid(occupancy, resolution=1.0)
    req = PlanRequest(start=(1.5, 1.5, 0.5), goal=(8.5, 1.5, 0.5), map=grid)
    path = plan(req)
    assert path.waypoints[:, 2].max() >= 3.0
    assert _collision_free(path, grid)


def test_plan_random_maps_compare_algorithms():
    rng = np.random.default_rng(11)
    solved = 0
    for _ in range(10):
        grid = VoxelGrid(rng.random((40, 40, 1)) < 0.2, resolution=1.0)
        free = np.argwhere(~grid.occupancy)
        a, b = rng.choice(len(free), size=2, replace=False)
        req = PlanRequest(
            start=grid.index_to_world(free[a]), goal=grid.index_to_world(free[b]), map=grid, mode=Mode.TWO_D
        )
        try:
            a_star = plan_a_star(req)
        except UnreachableError:
            with pytest.raises(UnreachableError):
                plan_lazy_theta_star(req)
            continue
        theta = plan_theta_star(req)
        lazy = plan_lazy_theta_star(req)
        euclid = float(np.linalg.norm(req.goal - req.start))
        assert euclid - 1e-9 <= lazy.total_length <= a_star.total_length + 1e-9
        assert lazy.los_checks_performed <= theta.los_checks_performed
        for p in (theta, lazy):
            for u, v in zip(p.waypoints[:-1], p.waypoints[1:]):
                assert line_of_sight(u, v, grid)
        solved += 1
    assert solved >= 5


def _random_request(rng, size: int, density: float = 0.2) -> PlanRequest:
    grid = VoxelGrid(rng.random((size, size, 1)) < density, resolution=1.0)
    free = np.argwhere(~grid.occupancy)
    a, b = rng.choice(len(free), size=2, replace=False)
    start, goal = grid.index_to_world(free[a]), grid.index_to_world(free[b])
    return PlanRequest(start=start, goal=goal, map=grid, mode=Mode.TWO_D)


def _shortest_visible_path(points: np.ndarray, occupancy: np.ndarray, touching_blocks: bool) -> float:
    """Dijkstra from ``points[0]`` to ``points[1]`` over every pair of mutually visible points.

    Cells of the 2D ``occupancy`` are unit squares. With ``touching_blocks`` a segment that meets a
    closed occupied square is hidden; otherwise only crossing an open interior hides it.
    """
    lows = np.argwhere(occupancy).astype(float)
    highs = lows + 1.0
    rows, cols, lengths = [], [], []
    for i in range(len(points) - 1):
        p0 = points[i]
        d = points[i + 1 :] - p0
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (lows[None] - p0) / d[:, None]
            t2 = (highs[None] - p0) / d[:, None]
        parallel = d[:, None, :] == 0
        if touching_blocks:
            inside = (p0 >= lows) & (p0 <= highs)
        else:
            inside = (p0 > lows) & (p0 < highs)
        near = np.where(parallel, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
        far = np.where(parallel, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
        overlap = np.minimum(far.min(axis=2), 1.0) - np.maximum(near.max(axis=2), 0.0)
        hidden = overlap >= -1e-9 if touching_blocks else overlap > 1e-9
        visible = np.flatnonzero(~hidden.any(axis=1))
        rows += [i] * len(visible)
        cols += (i + 1 + visible).tolist()
        lengths += np.linalg.norm(d[visible], axis=1).tolist()
    graph = csr_matrix((lengths, (rows, cols)), shape=(len(points), len(points)))
    return float(dijkstra(graph, directed=False, indices=0)[1])


def _visibility_graph_length(grid: VoxelGrid, start, goal) -> float:
    """Continuous shortest path around the occupied cells of a 1 m, 2D map.

    Vertices are start, goal and every cell corner where a path may bend. Touching an edge or
    corner of an occupied cell is allowed, so the result is a lower bound for any grid path.
    """
    occupancy = grid.occupancy[:, :, 0]
    padded = np.pad(occupancy, 1).astype(int)
    touching = padded[:-1, :-1] + padded[1:, :-1] + padded[:-1, 1:] + padded[1:, 1:]
    corners = np.argwhere((touching == 1) | (touching == 2)).astype(float)
    points = np.vstack([np.asarray(start)[:2], np.asarray(goal)[:2], corners])
    return _shortest_visible_path(points, occupancy, touching_blocks=False)


def _center_graph_length(grid: VoxelGrid, start, goal) -> float:
    """Shortest path over free cell centers joined by line of sight: the best any-angle grid path."""
    occupancy = grid.occupancy[:, :, 0]
    ends = np.array([np.asarray(start)[:2], np.asarray(goal)[:2]])
    centers = np.argwhere(~occupancy) + 0.5
    centers = centers[~(centers[:, None, :] == ends[None]).all(axis=2).any(axis=1)]
    return _shortest_visible_path(np.vstack([ends, centers]), occupancy, touching_blocks=True)


@pytest.mark.slow
def test_plan_random_maps_full_sweep():
    rng = np.random.default_rng(64)
    solved = 0
    for _ in range(100):
        req = _random_request(rng, 64)
        try:
            a_star = plan_a_star(req)
        except UnreachableError:
            continue
        theta = plan_theta_star(req)
        lazy = plan_lazy_theta_star(req)
        euclid = float(np.linalg.norm(req.goal - req.start))
        assert euclid - 1e-9 <= lazy.total_length <= a_star.total_length + 1e-9
        assert theta.total_length <= a_star.total_length + 1e-9
        assert lazy.total_length <= 1.02 * theta.total_length
        assert lazy.los_checks_performed <= theta.los_checks_performed
        solved += 1
    assert solved >= 70


@pytest.mark.slow
def test_plan_random_maps_against_visibility_graphs():
    rng = np.random.default_rng(20)
    ratios = []
    for _ in range(40):
        req = _random_request(rng, 20)
        try:
            lazy = plan_lazy_theta_star(req)
        except UnreachableError:
            continue
        theta = plan_theta_star(req)
        continuous = _visibility_graph_length(req.map, req.start, req.goal)
        best = _center_graph_length(req.map, req.start, req.goal)
        assert continuous - 1e-9 <= best <= lazy.total_length + 1e-9
        assert best <= theta.total_length + 1e-9
        ratios.append(lazy.total_length / best)
    assert len(ratios) >= 28
    assert np.mean(ratios) <= 1.02
    assert max(ratios) <= 1.05


def test_visibility_graph_length_wall_gap():
    occupancy = np.zeros((10, 10, 1), dtype=bool)
    occupancy[5, :, 0] = True
    occupancy[5, 7, 0] = False
    grid = VoxelGrid(occupancy, resolution=1.0)
    expected = math.dist((0.5, 0.5), (5.0, 7.0)) + 1.0 + math.dist((6.0, 7.0), (9.5, 0.5))
    assert _visibility_graph_length(grid, (0.5, 0.5, 0.5), (9.5, 0.5, 0.5)) == pytest.approx(expected)


#########
# Maps  #
#########


def test_inflate_zero_radius():
    grid = _flat(cells=[(3, 3)])
    assert inflate(grid, 0.0) is grid


def test_inflate_one_voxel():
    grid = VoxelGrid.empty((5, 5, 5), 0.5).with_points([[1.25, 1.25, 1.25]])
    inflated = inflate(grid, 0.5)
    assert inflated.n_occupied == 7
    assert inflated.occupancy[3, 2, 2]
    assert not inflated.occupancy[3, 3, 2]


def test_inflate_negative_radius():
    with pytest.raises(ValueError):
        inflate(_flat(), -0.1)


def test_inflate_is_monotone_in_radius(rng):
    grid = VoxelGrid(rng.random((16, 16, 8)) < 0.03, resolution=0.5)
    previous = grid.occupancy
    for radius in (0.3, 0.5, 0.75, 1.0, 1.6):
        inflated = inflate(grid, radius).occupancy
        assert not (previous & ~inflated).any()
        previous = inflated
    assert previous.sum() > grid.n_occupied


def test_planning_map_coarsen_and_slice():
    grid = VoxelGrid.empty((8, 8, 4), 0.5).with_points([[0.1, 0.1, 1.1]])
    req = PlanRequest(start=(3.0, 3.0, 1.2), goal=(3.5, 3.5, 1.2), map=grid, mode=Mode.TWO_D, coarsen=2)
    layer = planning_map(req)
    assert layer.dims == (4, 4, 1)
    assert layer.resolution == 1.0
    assert layer.occupancy[0, 0, 0]


##################
# Local replans  #
##################


@pytest.fixture
def corridor():
    grid = _flat(dims=(20, 20))
    req = PlanRequest(start=(1.5, 10.5, 0.5), goal=(18.5, 10.5, 0.5), map=grid, mode=Mode.TWO_D)
    return grid, req, plan(req)


def test_validate_and_replan_no_obstacles(corridor):
    grid, req, path = corridor
    assert validate_and_replan(path, np.zeros((0, 3)), grid, req) is path


def test_validate_and_replan_off_path(corridor):
    grid, req, path = corridor
    assert validate_and_replan(path, [[10.5, 2.5, 0.5]], grid, req) is path


def test_validate_and_replan_blocked(corridor):
    grid, req, path = corridor
    live = [[10.5, 10.5, 0.5], [10.5, 11.2, 0.5]]
    new = validate_and_replan(path, live, grid, req)
    assert new is not path
    np.testing.assert_array_equal(new.goal, path.goal)
    assert new.total_length > path.total_length
    assert _collision_free(new, grid.with_points(live))


def test_validate_and_replan_from_position(corridor):
    grid, req, path = corridor
    new = validate_and_replan(path, [[12.5, 10.5, 0.5]], grid, req, position=(6.5, 10.5, 0.5))
    np.testing.assert_array_equal(new.start, [6.5, 10.5, 0.5])


def test_validate_and_replan_ignores_points_at_the_robot(corridor):
    grid, req, path = corridor
    assert validate_and_replan(path, [[2.0, 10.5, 0.5]], grid, req) is path


def test_validate_and_replan_sealed(corridor):
    grid, req, path = corridor
    wall = [[10.5, y + 0.5, 0.5] for y in range(20)]
    with pytest.raises(UnreachableError):
        validate_and_replan(path, wall, grid, req)


###########
# Exports #
###########


def test_export_path_csv(tmp_path):
    path = Path(np.array([[0.0, 0.0, 0.0], [1.5, 2.0, 0.25]]))
    file = tmp_path / "path.csv"
    export_path_csv(path, file)
    with file.open() as f:
        rows = list(csv.reader(f))
    assert rows == [["index", "x", "y", "z"], ["0", "0.0", "0.0", "0.0"], ["1", "1.5", "2.0", "0.25"]]


def test_benchmark(tmp_path):
    maps = [_flat(dims=(12, 12), cells=[(6, y) for y in range(10)])]
    records = benchmark(maps, instances_per_map=3, seed=1)
    assert len(records) == 9
    assert {r["algorithm"] for r in records} == {"astar", "theta", "lazytheta"}
    assert {r["instance"] for r in records} == {0, 1, 2}

    file = tmp_path / "bench.json"
    write_benchmark(records, file)
    assert json.loads(file.read_text()) == records
