"""A* search on occupancy grids and the conversion of its output into poses and actions."""

import heapq
import math
from typing import Iterable, Iterator, List, NamedTuple, Optional, Sequence, Tuple, Union, overload

import numpy as np

from .errors import FlonavError
from .floorgrid import GridMap, PixelCoord, WorldPoint, pixel_to_world

SQRT2 = math.sqrt(2.0)
LOOKAHEAD = 6
"""Orientation at a point faces the point this many steps further along the path."""

MOVES: Tuple[Tuple[int, int], ...] = ((0, 1), (1, 0), (0, -1), (-1, 0), (1, 1), (1, -1), (-1, 1), (-1, -1))
"""``(d_row, d_col)`` of the eight neighbors; the last four are diagonal."""


class PlanningError(FlonavError):
    pass


class Pose(NamedTuple):
    x: float
    y: float
    theta: float

    @property
    def position(self) -> WorldPoint:
        return WorldPoint(self.x, self.y)


class Action(NamedTuple):
    """A planar displacement in meters."""

    dx: float
    dy: float

    @property
    def norm(self) -> float:
        return math.hypot(self.dx, self.dy)


class PixelPath(Sequence[PixelCoord]):
    """Cells visited by a grid path, in order; empty when the goal is unreachable."""

    def __init__(self, coords: Iterable[Tuple[int, int]], grid: GridMap):
        self.coords: Tuple[PixelCoord, ...] = tuple(PixelCoord(int(c), int(r)) for c, r in coords)
        self.grid: GridMap = grid
        n_straight = n_diagonal = 0
        for (c0, r0), (c1, r1) in zip(self.coords, self.coords[1:]):
            step = (abs(c1 - c0), abs(r1 - r0))
            if step in ((1, 0), (0, 1)):
                n_straight += 1
            elif step == (1, 1):
                n_diagonal += 1
            else:
                raise PlanningError(f"cells {(c0, r0)} and {(c1, r1)} are not neighbors")
        self.n_straight: int = n_straight
        self.n_diagonal: int = n_diagonal

    @property
    def grid_id(self) -> str:
        return self.grid.fingerprint

    @property
    def cost(self) -> float:
        """Path cost in cells: 1 per straight move, √2 per diagonal move."""
        return self.n_straight + self.n_diagonal * SQRT2

    @property
    def found(self) -> bool:
        return bool(self.coords)

    def world_points(self) -> List[WorldPoint]:
        return [pixel_to_world(u, self.grid) for u in self.coords]

    @overload
    def __getitem__(self, index: int) -> PixelCoord:
        ...

    @overload
    def __getitem__(self, index: slice) -> Sequence[PixelCoord]:
        ...

    def __getitem__(self, index):
        return self.coords[index]

    def __len__(self) -> int:
        return len(self.coords)

    def __iter__(self) -> Iterator[PixelCoord]:
        return iter(self.coords)

    def __eq__(self, other):
        return isinstance(other, PixelPath) and self.coords == other.coords and self.grid_id == other.grid_id

    def __repr__(self):
        return f"{self.__class__.__name__}({len(self)} cells, cost={self.cost:.3f})"


class Trajectory(Sequence[Pose]):
    """At least two poses in world coordinates."""

    def __init__(self, poses: Iterable[Tuple[float, float, float]]):
        array = np.array([tuple(pose) for pose in poses], dtype=np.float64).reshape(-1, 3)
        if len(array) < 2:
            raise PlanningError(f"a trajectory needs at least 2 poses, got {len(array)}")
        if not np.isfinite(array).all():
            raise PlanningError("trajectory poses must be finite")
        array.setflags(write=False)
        self._poses: np.ndarray = array

    @classmethod
    def from_arrays(cls, positions: np.ndarray, orientations: np.ndarray) -> "Trajectory":
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
        orientations = np.asarray(orientations, dtype=np.float64).reshape(-1)
        if len(positions) != len(orientations):
            raise PlanningError(f"{len(positions)} positions but {len(orientations)} orientations")
        return cls(np.column_stack([positions, orientations]))

    @property
    def positions(self) -> np.ndarray:
        return self._poses[:, :2]

    @property
    def orientations(self) -> np.ndarray:
        return self._poses[:, 2]

    @property
    def start(self) -> Pose:
        return self[0]

    @property
    def end(self) -> Pose:
        return self[-1]

    def __getitem__(self, index):
        if isinstance(index, slice):
            return [Pose(*map(float, row)) for row in self._poses[index]]
        return Pose(*map(float, self._poses[index]))

    def __len__(self) -> int:
        return len(self._poses)

    def __eq__(self, other):
        return isinstance(other, Trajectory) and np.array_equal(self._poses, other._poses)

    def __repr__(self):
        return f"{self.__class__.__name__}({len(self)} poses, length={path_length(self):.3f}m)"


def octile(d_col: int, d_row: int) -> float:
    dx, dy = abs(d_col), abs(d_row)
    return (max(dx, dy) - min(dx, dy)) + SQRT2 * min(dx, dy)


def astar(
    grid: GridMap, start: Tuple[int, int], goal: Tuple[int, int], heuristic_weight: float = 1.0
) -> PixelPath:
    """Finds a minimum-cost 8-connected path between two free cells.

    Diagonal moves are only allowed when both orthogonally adjacent cells are free. Among open cells with equal
    f-scores the one with the lower heuristic, then the lower row-major index, expands first.

    Args:
        grid: the planning grid; every non-Free cell is an obstacle.
        start: start cell.
        goal: goal cell.
        heuristic_weight: scale of the octile heuristic; 0 turns the search into Dijkstra's algorithm.

    Returns:
        The path, or an empty :class:`PixelPath` if the goal is unreachable.

    Raises:
        PlanningError: if ``start`` or ``goal`` is outside the grid or not Free.

    """
    start = PixelCoord(*start)
    goal = PixelCoord(*goal)
    for role, u in (("start", start), ("goal", goal)):
        if not grid.in_bounds(u):
            raise PlanningError(f"{role} {tuple(u)} is outside the {grid.width}x{grid.height} grid")
        if not grid.is_free(u):
            raise PlanningError(f"{role} {tuple(u)} is not free on the planning grid")
    width = grid.width
    free: List[List[bool]] = grid.free_mask.tolist()
    start_index = start.row * width + start.col
    goal_index = goal.row * width + goal.col

    def h(row: int, col: int) -> float:
        return heuristic_weight * octile(goal.col - col, goal.row - row)

    g = {start_index: 0.0}
    parent = {start_index: -1}
    closed = set()
    h0 = h(start.row, start.col)
    queue: List[Tuple[float, float, int]] = [(h0, h0, start_index)]
    while queue:
        _, _, index = heapq.heappop(queue)
        if index in closed:
            continue
        closed.add(index)
        if index == goal_index:
            break
        row, col = divmod(index, width)
        g_here = g[index]
        for d_row, d_col in MOVES:
            r, c = row + d_row, col + d_col
            if not (0 <= r < grid.height and 0 <= c < width) or not free[r][c]:
                continue
            if d_row and d_col:
                if not (free[row][c] and free[r][col]):
                    continue
                step = SQRT2
            else:
                step = 1.0
            neighbor = r * width + c
            if neighbor in closed:
                continue
            g_new = g_here + step
            if g_new < g.get(neighbor, math.inf):
                g[neighbor] = g_new
                parent[neighbor] = index
                h_new = h(r, c)
                heapq.heappush(queue, (g_new + h_new, h_new, neighbor))
    if goal_index not in closed:
        return PixelPath((), grid)
    cells: List[PixelCoord] = []
    index = goal_index
    while index != -1:
        row, col = divmod(index, width)
        cells.append(PixelCoord(col, row))
        index = parent[index]
    cells.reverse()
    return PixelPath(cells, grid)


Points = Union[PixelPath, Trajectory, Sequence[Tuple[float, float]], np.ndarray]


def _positions(path: Points) -> np.ndarray:
    if isinstance(path, PixelPath):
        return np.array(path.world_points(), dtype=np.float64).reshape(-1, 2)
    elif isinstance(path, Trajectory):
        return path.positions
    return np.asarray(path, dtype=np.float64).reshape(-1, 2)


def path_length(path: Points) -> float:
    """Sum of Euclidean segment lengths in meters."""
    points = _positions(path)
    if len(points) == 0:
        raise PlanningError("the length of an empty path is undefined")
    return math.fsum(math.hypot(float(dx), float(dy)) for dx, dy in np.diff(points, axis=0))


def assign_orientations(points: Sequence[Tuple[float, float]], lookahead: int = LOOKAHEAD) -> Trajectory:
    """Orients each point toward the point ``lookahead`` steps ahead (clamped to the last point).

    A zero look-ahead vector keeps the previous orientation; the first point then faces 0 rad.

    """
    positions = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(positions) < 2:
        raise PlanningError(f"orientation assignment needs at least 2 points, got {len(positions)}")
    last = len(positions) - 1
    orientations = np.zeros(len(positions), dtype=np.float64)
    previous = 0.0
    for i in range(len(positions)):
        dx, dy = positions[min(i + lookahead, last)] - positions[i]
        if dx != 0.0 or dy != 0.0:
            previous = math.atan2(dy, dx)
        orientations[i] = previous
    return Trajectory.from_arrays(positions, orientations)


def path_to_actions(trajectory: Trajectory) -> List[Action]:
    """``a_t = p_t - p_{t-1}`` for every consecutive pose pair."""
    return [Action(float(dx), float(dy)) for dx, dy in np.diff(trajectory.positions, axis=0)]


def plan_trajectory(grid: GridMap, start: Tuple[int, int], goal: Tuple[int, int]) -> Optional[Trajectory]:
    """A* followed by orientation assignment; ``None`` when the goal is unreachable or equals the start."""
    path = astar(grid, start, goal)
    if len(path) < 2:
        return None
    return assign_orientations(path.world_points())
