"""Kinematic execution of planar displacement actions on a scene's truth map.

The agent is a disk of radius ``SimConfig.agent_radius``. Every non-Free cell and everything outside the map is
an obstacle. A step that would bring the disk into contact with an obstacle stops at the last contact-free
sub-position and counts one collision.

"""

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, NamedTuple, Optional, Tuple

import numpy as np

from .config import SimConfig
from .floorgrid import GridMap, Scene, WorldPoint
from .planner import Action, Pose

RECOVERY_ROTATION = math.pi / 4


def wrap_angle(theta: float) -> float:
    """Wraps an angle to ``(-pi, pi]``."""
    wrapped = math.remainder(theta, 2 * math.pi)
    return math.pi if wrapped == -math.pi else wrapped


@dataclass(frozen=True)
class AgentState:
    pose: Pose
    collision_count: int = 0
    traveled: float = 0.0
    step_count: int = 0

    @property
    def position(self) -> WorldPoint:
        return self.pose.position

    def distance_to(self, goal: Tuple[float, float]) -> float:
        return math.hypot(goal[0] - self.pose.x, goal[1] - self.pose.y)


class Observation(NamedTuple):
    rays: np.ndarray
    """Normalized hit distances in ``[0, 1]``, ordered from the right edge of the field of view to the left."""
    goal: WorldPoint
    pose: Optional[Pose] = None


def disk_collides(grid: GridMap, x: float, y: float, radius: float) -> bool:
    """Whether a disk overlaps the interior of any obstacle cell or leaves the map."""
    res = grid.resolution
    gx, gy = x - grid.offset.x, y - grid.offset.y
    cols = np.arange(math.floor((gx - radius) / res), math.floor((gx + radius) / res) + 1)
    rows = np.arange(math.floor((gy - radius) / res), math.floor((gy + radius) / res) + 1)
    near_x = np.maximum(np.maximum(cols * res - gx, 0.0), gx - (cols + 1) * res)
    near_y = np.maximum(np.maximum(rows * res - gy, 0.0), gy - (rows + 1) * res)
    overlap = near_y[:, None] ** 2 + near_x[None, :] ** 2 < radius * radius
    inside_cols = (cols >= 0) & (cols < grid.width)
    inside_rows = (rows >= 0) & (rows < grid.height)
    if not (inside_cols.all() and inside_rows.all()):
        outside = ~(inside_rows[:, None] & inside_cols[None, :])
        if (overlap & outside).any():
            return True
    blocked = grid.blocked_mask[np.ix_(rows[inside_rows], cols[inside_cols])]
    return bool((overlap[np.ix_(inside_rows, inside_cols)] & blocked).any())


def substeps_for(action: Action, cfg: SimConfig, resolution: float) -> int:
    """Number of checked sub-positions: ``cfg.substeps``, raised to at least one per quarter cell of travel."""
    return max(cfg.substeps, int(math.ceil(action.norm / (0.25 * resolution))))


def step(state: AgentState, action: Tuple[float, float], scene: Scene, cfg: SimConfig) -> Tuple[AgentState, bool]:
    """Applies one displacement action.

    Returns:
        The new state and whether the move was cut short by a collision.

    """
    action = Action(float(action[0]), float(action[1]))
    x0, y0 = state.pose.x, state.pose.y
    if action.dx == 0.0 and action.dy == 0.0:
        return replace(state, step_count=state.step_count + 1), False
    n = substeps_for(action, cfg, scene.resolution)
    x, y = x0, y0
    collided = False
    for i in range(1, n + 1):
        if i == n:
            px, py = x0 + action.dx, y0 + action.dy
        else:
            fraction = i / n
            px, py = x0 + fraction * action.dx, y0 + fraction * action.dy
        if disk_collides(scene.truth_map, px, py, cfg.agent_radius):
            collided = True
            break
        x, y = px, py
    new_state = AgentState(
        pose=Pose(x, y, math.atan2(action.dy, action.dx)),
        collision_count=state.collision_count + int(collided),
        traveled=state.traveled + math.hypot(x - x0, y - y0),
        step_count=state.step_count + 1,
    )
    return new_state, collided


def recover(state: AgentState) -> AgentState:
    """Rotates the agent 45 degrees clockwise in place."""
    pose = state.pose
    return replace(state, pose=Pose(pose.x, pose.y, wrap_angle(pose.theta - RECOVERY_ROTATION)))


def ray_angles(theta: float, cfg: SimConfig) -> np.ndarray:
    if cfg.num_rays == 1:
        return np.array([theta], dtype=np.float64)
    half = math.radians(cfg.fov) / 2
    return theta + np.linspace(-half, half, cfg.num_rays)


def raycast(grid: GridMap, pose: Pose, cfg: SimConfig) -> np.ndarray:
    """Normalized distance to the first obstacle cell along each ray of the field of view.

    Rays traverse the grid exactly: each ray is split at every grid line it crosses and the first segment
    lying in an obstacle cell, or outside the map, ends it.

    """
    res = grid.resolution
    reach = cfg.max_range / res
    gx = (pose.x - grid.offset.x) / res
    gy = (pose.y - grid.offset.y) / res
    angles = ray_angles(pose.theta, cfg)
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    k = np.arange(int(math.ceil(reach)) + 2, dtype=np.float64)
    crossings = [np.zeros((len(angles), 1))]
    for axis, origin in ((0, gx), (1, gy)):
        d = dirs[:, axis : axis + 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            forward = (math.floor(origin) + 1 + k - origin) / d
            backward = (math.floor(origin) - k - origin) / d
        t = np.where(d > 0, forward, np.where(d < 0, backward, np.inf))
        crossings.append(np.where(t >= 0, t, np.inf))
    t = np.sort(np.minimum(np.concatenate(crossings, axis=1), reach), axis=1)
    t0, t1 = t[:, :-1], t[:, 1:]
    mid = 0.5 * (t0 + t1)
    cols = np.floor(gx + mid * dirs[:, 0:1]).astype(np.int64)
    rows = np.floor(gy + mid * dirs[:, 1:2]).astype(np.int64)
    inside = (cols >= 0) & (cols < grid.width) & (rows >= 0) & (rows < grid.height)
    blocked = np.ones(cols.shape, dtype=bool)
    blocked[inside] = grid.blocked_mask[rows[inside], cols[inside]]
    hits = blocked & (t1 > t0)
    first = np.argmax(hits, axis=1)
    distances = np.where(hits.any(axis=1), t0[np.arange(len(first)), first], reach)
    return np.clip(distances / reach, 0.0, 1.0)


def observe(
    state: AgentState, scene: Scene, cfg: SimConfig, goal: Tuple[float, float] = (0.0, 0.0), pose: Optional[Pose] = None
) -> Observation:
    """Raycasts the truth map from the agent's true pose."""
    return Observation(raycast(scene.truth_map, state.pose, cfg), WorldPoint(*goal), pose)


class OrientationMode(Enum):
    KEEP = "keep"
    """robustness mode: only the position is perturbed"""
    UNIFORM = "uniform"
    """diagnostic mode: the orientation is redrawn uniformly over a full turn"""


def noisy_pose(
    pose: Pose, pos_var: float, orient_mode: OrientationMode, rng: np.random.Generator
) -> Pose:
    if pos_var < 0:
        raise ValueError(f"position variance must be non-negative, got {pos_var!r}")
    noise = rng.normal(0.0, math.sqrt(pos_var), size=2) if pos_var > 0 else np.zeros(2)
    theta = pose.theta if orient_mode is OrientationMode.KEEP else float(rng.uniform(0.0, 2 * math.pi))
    return Pose(pose.x + float(noise[0]), pose.y + float(noise[1]), theta)


class Judgment(NamedTuple):
    success: bool
    reason: Optional[str]
    """``"distance"``, ``"collisions"`` or ``"travel"``; ``None`` on success."""


def judge_values(
    final_distance: float, collisions: int, traveled: float, tau_d: float, tau_c: Optional[int], max_travel: float
) -> Judgment:
    if final_distance > tau_d:
        return Judgment(False, "distance")
    elif tau_c is not None and collisions > tau_c:
        return Judgment(False, "collisions")
    elif traveled > max_travel:
        return Judgment(False, "travel")
    return Judgment(True, None)


def judge(final_state: AgentState, goal: Tuple[float, float], cfg: SimConfig) -> Judgment:
    return judge_values(
        final_state.distance_to(goal), final_state.collision_count, final_state.traveled, cfg.tau_d, cfg.tau_c,
        cfg.max_travel,
    )


class Localizer(ABC):
    """Produces the pose estimate an agent plans from."""

    @abstractmethod
    def localize(self, pose: Pose, rng: np.random.Generator) -> Pose:
        raise NotImplementedError()


class GroundTruthLocalizer(Localizer):
    def localize(self, pose: Pose, rng: np.random.Generator) -> Pose:
        return pose

    def __repr__(self):
        return "GroundTruthLocalizer()"


class NoisyLocalizer(Localizer):
    def __init__(self, pos_var: float, orient_mode: OrientationMode = OrientationMode.KEEP):
        if pos_var < 0:
            raise ValueError(f"position variance must be non-negative, got {pos_var!r}")
        self.pos_var: float = pos_var
        self.orient_mode: OrientationMode = orient_mode

    def localize(self, pose: Pose, rng: np.random.Generator) -> Pose:
        return noisy_pose(pose, self.pos_var, self.orient_mode, rng)

    def __repr__(self):
        return f"NoisyLocalizer(pos_var={self.pos_var!r}, orient_mode={self.orient_mode.value!r})"


class Simulator:
    """One agent moving through one scene."""

    def __init__(self, scene: Scene, cfg: SimConfig, start: Pose):
        self.scene: Scene = scene
        self.cfg: SimConfig = cfg
        self.state: AgentState = AgentState(start)

    def step(self, action: Tuple[float, float]) -> bool:
        self.state, collided = step(self.state, action, self.scene, self.cfg)
        return collided

    def recover(self):
        self.state = recover(self.state)

    def observe(self, goal: Tuple[float, float], pose: Optional[Pose] = None) -> Observation:
        return observe(self.state, self.scene, self.cfg, goal, pose)

    def judge(self, goal: Tuple[float, float]) -> Judgment:
        return judge(self.state, goal, self.cfg)

    def in_collision(self) -> bool:
        return disk_collides(self.scene.truth_map, self.state.pose.x, self.state.pose.y, self.cfg.agent_radius)


def replay(start: Pose, actions: Iterable[Tuple[float, float]], scene: Scene, cfg: SimConfig) -> AgentState:
    """Executes an open-loop action sequence without recovery rotations."""
    state = AgentState(start)
    for action in actions:
        state, _ = step(state, action, scene, cfg)
    return state
