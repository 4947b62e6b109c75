import math

import networkx as nx
import numpy as np
import pytest

from flonav.floorgrid import CellState, GridMap, PixelCoord
from flonav.planner import (
    SQRT2,
    Action,
    PixelPath,
    PlanningError,
    Trajectory,
    assign_orientations,
    astar,
    path_length,
    path_to_actions,
    plan_trajectory,
)


def grid_graph(grid: GridMap) -> nx.Graph:
    """The 8-connected free-cell graph without corner cutting."""
    graph = nx.Graph()
    free = grid.free_mask
    for row, col in zip(*np.nonzero(free)):
        graph.add_node((int(col), int(row)))
        for d_row, d_col, weight in ((0, 1, 1.0), (1, 0, 1.0), (1, 1, SQRT2), (1, -1, SQRT2)):
            r, c = row + d_row, col + d_col
            if not (0 <= r < grid.height and 0 <= c < grid.width) or not free[r, c]:
                continue
            if d_row and d_col and not (free[row, c] and free[r, col]):
                continue
            graph.add_edge((int(col), int(row)), (int(c), int(r)), weight=weight)
    return graph


def random_grid(rng: np.random.Generator, size: int = 64, density: float = 0.3) -> GridMap:
    cells = np.where(rng.random((size, size)) < density, CellState.OCCUPIED, CellState.FREE).astype(np.uint8)
    return GridMap(cells, 0.1)


def test_astar_matches_dijkstra():
    rng = np.random.default_rng(2024)
    checked = 0
    for _ in range(200):
        grid = random_grid(rng)
        free = np.argwhere(grid.free_mask)
        (r0, c0), (r1, c1) = free[rng.choice(len(free), size=2, replace=False)]
        start, goal = PixelCoord(int(c0), int(r0)), PixelCoord(int(c1), int(r1))
        path = astar(grid, start, goal)
        graph = grid_graph(grid)
        try:
            expected = nx.dijkstra_path_length(graph, start, goal)
        except nx.NetworkXNoPath:
            assert not path.found
            continue
        checked += 1
        assert path.found
        assert path[0] == start and path[-1] == goal
        assert path.cost == pytest.approx(expected, abs=1e-9)
        assert all(grid.is_free(u) for u in path)
        assert len(set(path)) == len(path)
    assert checked > 50


def test_astar_heuristic_weight_zero_is_dijkstra():
    rng = np.random.default_rng(5)
    grid = random_grid(rng, 32, 0.2)
    free = np.argwhere(grid.free_mask)
    (r0, c0), (r1, c1) = free[0], free[-1]
    weighted = astar(grid, (c0, r0), (c1, r1))
    dijkstra = astar(grid, (c0, r0), (c1, r1), heuristic_weight=0.0)
    assert weighted.found == dijkstra.found
    if weighted.found:
        assert weighted.cost == pytest.approx(dijkstra.cost)


def test_astar_is_deterministic():
    grid = GridMap(np.full((20, 20), CellState.FREE, dtype=np.uint8), 0.1)
    first = astar(grid, (0, 0), (19, 12))
    assert first == astar(grid, (0, 0), (19, 12))
    assert first.n_diagonal == 12 and first.n_straight == 7
    assert first.cost == pytest.approx(7 + 12 * SQRT2)


def test_astar_does_not_cut_corners():
    cells = np.full((3, 3), CellState.FREE, dtype=np.uint8)
    cells[1, 0] = CellState.OCCUPIED
    path = astar(GridMap(cells, 0.1), (0, 0), (1, 1))
    assert list(path) == [(0, 0), (1, 0), (1, 1)]
    assert path.cost == 2.0


def test_astar_edge_cases():
    cells = np.full((5, 5), CellState.FREE, dtype=np.uint8)
    cells[:, 2] = CellState.OCCUPIED
    cells[0, 0] = CellState.UNKNOWN
    grid = GridMap(cells, 0.1)
    assert not astar(grid, (1, 1), (4, 4)).found
    same = astar(grid, (1, 1), (1, 1))
    assert list(same) == [(1, 1)] and same.cost == 0
    with pytest.raises(PlanningError, match="not free"):
        astar(grid, (0, 0), (1, 1))
    with pytest.raises(PlanningError, match="outside"):
        astar(grid, (1, 1), (5, 1))
    assert plan_trajectory(grid, (1, 1), (1, 1)) is None
    assert plan_trajectory(grid, (1, 1), (4, 4)) is None


def test_pixel_path_validation():
    grid = GridMap(np.full((5, 5), CellState.FREE, dtype=np.uint8), 0.1)
    with pytest.raises(PlanningError):
        PixelPath([(0, 0), (2, 0)], grid)


def test_path_length():
    assert path_length([(0, 0), (3, 4), (3, 5)]) == pytest.approx(6.0)
    assert path_length([(1, 1)]) == 0.0
    with pytest.raises(PlanningError):
        path_length([])
    grid = GridMap(np.full((10, 10), CellState.FREE, dtype=np.uint8), 0.1)
    path = astar(grid, (0, 0), (5, 5))
    assert path_length(path) == pytest.approx(path.cost * grid.resolution)


def test_assign_orientations():
    points = [(float(i), 0.0) for i in range(8)] + [(7.0, float(j)) for j in range(1, 4)]
    trajectory = assign_orientations(points, lookahead=2)
    assert trajectory.orientations[0] == 0.0
    assert trajectory.orientations[6] == pytest.approx(math.atan2(1.0, 1.0))
    assert trajectory.orientations[8] == pytest.approx(math.pi / 2)
    # the last point looks at itself and keeps the previous heading
    assert trajectory.orientations[-1] == trajectory.orientations[-2]
    stationary = assign_orientations([(1.0, 1.0), (1.0, 1.0)])
    assert list(stationary.orientations) == [0.0, 0.0]
    with pytest.raises(PlanningError):
        assign_orientations([(0.0, 0.0)])


def test_actions_reconstruct_positions():
    grid = GridMap(np.full((30, 30), CellState.FREE, dtype=np.uint8), 0.1)
    trajectory = plan_trajectory(grid, (2, 3), (25, 17))
    assert trajectory is not None
    actions = path_to_actions(trajectory)
    assert len(actions) == len(trajectory) - 1
    positions = trajectory.start.position + np.cumsum(np.array(actions), axis=0)
    assert np.allclose(positions, trajectory.positions[1:], atol=1e-12)
    assert all(isinstance(a, Action) and a.norm <= 0.1 * SQRT2 + 1e-12 for a in actions)


def test_trajectory_validation():
    with pytest.raises(PlanningError):
        Trajectory([(0.0, 0.0, 0.0)])
    with pytest.raises(PlanningError):
        Trajectory([(0.0, 0.0, 0.0), (math.nan, 0.0, 0.0)])
    with pytest.raises(PlanningError):
        Trajectory.from_arrays(np.zeros((3, 2)), np.zeros(2))
