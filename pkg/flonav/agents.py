"""Closed-loop navigation agents sharing one control loop.

Every agent plans a chunk of displacement actions from its current pose estimate, executes it on the truth map,
and replans when the chunk runs out. A collided step is followed by a 45 degree clockwise recovery rotation and
an immediate replan.

"""

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from logging import getLogger
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from .cache import planning_grid
from .config import RunConfig, SimConfig, derive_seed
from .errors import FlonavError
from .floorgrid import CellState, GridError, GridMap, PixelCoord, Scene, WorldPoint, world_to_pixel
from .planner import Action, PlanningError, Pose, astar, path_length
from .policy import FloDiffPolicy, Variant
from .simulator import (
    AgentState,
    GroundTruthLocalizer,
    Localizer,
    Observation,
    OrientationMode,
    Simulator,
    disk_collides,
    judge_values,
    noisy_pose,
)

log = getLogger("agents")

RANDOM_WALK_STEP = 0.1


class InfeasibleEpisodeError(FlonavError):
    pass


class StepLogError(FlonavError):
    pass


class AgentSpecError(FlonavError, ValueError):
    pass


class AgentKind(Enum):
    LOC_ASTAR = "loc-astar"
    FLODIFF_LOC = "flodiff-loc"
    FLODIFF_NAIVE = "flodiff-naive"
    RANDOM_WALK = "random-walk"

    @property
    def uses_policy(self) -> bool:
        return self in (AgentKind.FLODIFF_LOC, AgentKind.FLODIFF_NAIVE)

    @property
    def uses_localizer(self) -> bool:
        return self in (AgentKind.LOC_ASTAR, AgentKind.FLODIFF_LOC)


@dataclass(frozen=True)
class AgentSpec:
    name: str
    kind: AgentKind
    localizer: Localizer = field(default_factory=GroundTruthLocalizer)
    policy: Optional[FloDiffPolicy] = None
    mask_floorplan: bool = False

    def __post_init__(self):
        if self.kind.uses_policy:
            if self.policy is None:
                raise AgentSpecError(f"agent {self.name!r} of kind {self.kind.value} needs a trained policy")
            expected = Variant.NAIVE if self.kind is AgentKind.FLODIFF_NAIVE else Variant.LOC
            if self.policy.variant is not expected:
                raise AgentSpecError(
                    f"agent {self.name!r} needs a {expected.value} policy, got a {self.policy.variant.value} one"
                )


@dataclass(frozen=True)
class EvalRecord:
    method: str
    scene_id: str
    pair_index: int
    final_distance: float
    collisions: int
    traveled: float
    shortest: float
    steps: int = 0
    replans: int = 0

    def __post_init__(self):
        if self.traveled < 0 or self.collisions < 0:
            raise ValueError("traveled distance and collision count must be non-negative")

    def succeeded(self, tau_d: float, tau_c: Optional[int], max_travel: float = SimConfig.max_travel) -> bool:
        return judge_values(self.final_distance, self.collisions, self.traveled, tau_d, tau_c, max_travel).success

    def to_json(self) -> Dict:
        return {
            "method": self.method,
            "scene_id": self.scene_id,
            "pair_index": self.pair_index,
            "final_distance": self.final_distance,
            "collisions": self.collisions,
            "traveled": self.traveled,
            "shortest": self.shortest,
            "steps": self.steps,
            "replans": self.replans,
        }

    @staticmethod
    def from_json(record: Dict) -> "EvalRecord":
        return EvalRecord(**record)


class StepEntry(NamedTuple):
    """One line of a step log: either an executed action or a replan marker."""

    x: float
    y: float
    theta: float
    action: Optional[Action]
    collided: bool
    replan: bool
    estimate: Optional[Pose]


@dataclass
class StepLog:
    method: str
    scene_id: str
    pair_index: int
    start: Pose
    goal: WorldPoint
    entries: List[StepEntry] = field(default_factory=list)

    def positions(self) -> np.ndarray:
        """The start position followed by the position after every executed action."""
        points = [(self.start.x, self.start.y)]
        points.extend((e.x, e.y) for e in self.entries if e.action is not None)
        return np.array(points, dtype=np.float64)

    def save(self, path: Union[str, Path]):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            header = {
                "method": self.method,
                "scene_id": self.scene_id,
                "pair_index": self.pair_index,
                "start": list(self.start),
                "goal": list(self.goal),
            }
            f.write(json.dumps(header, allow_nan=False) + "\n")
            for entry in self.entries:
                record = {
                    "pose": [entry.x, entry.y, entry.theta],
                    "action": None if entry.action is None else list(entry.action),
                    "collided": entry.collided,
                    "replan": entry.replan,
                    "estimate": None if entry.estimate is None else list(entry.estimate),
                }
                f.write(json.dumps(record, allow_nan=False) + "\n")

    @staticmethod
    def load(path: Union[str, Path]) -> "StepLog":
        path = Path(path)
        with open(path, "r", encoding="utf-8") as f:
            lines = [line for line in f if line.strip()]
        if not lines:
            raise StepLogError(f"{path}: empty step log")
        try:
            header = json.loads(lines[0])
            log_ = StepLog(
                str(header["method"]),
                str(header["scene_id"]),
                int(header["pair_index"]),
                Pose(*map(float, header["start"])),
                WorldPoint(*map(float, header["goal"])),
            )
        except (ValueError, KeyError, TypeError) as e:
            raise StepLogError(f"{path}:1: malformed step log header: {e}")
        for line_number, line in enumerate(lines[1:], start=2):
            try:
                record = json.loads(line)
                x, y, theta = map(float, record["pose"])
                action = record["action"]
                estimate = record["estimate"]
                log_.entries.append(
                    StepEntry(
                        x,
                        y,
                        theta,
                        None if action is None else Action(*map(float, action)),
                        bool(record["collided"]),
                        bool(record["replan"]),
                        None if estimate is None else Pose(*map(float, estimate)),
                    )
                )
            except (ValueError, KeyError, TypeError) as e:
                raise StepLogError(f"{path}:{line_number}: malformed step log entry: {e}")
        return log_


def _nearest_free(grid: GridMap, p: Tuple[float, float], radius: float) -> Optional[PixelCoord]:
    """The free cell whose center is closest to ``p``, if it lies within ``radius``; ties go to the lower index."""
    free = np.argwhere(grid.free_mask)
    if len(free) == 0:
        return None
    centers = (free[:, ::-1] + 0.5) * grid.resolution + np.array(grid.offset)
    distances = np.hypot(centers[:, 0] - p[0], centers[:, 1] - p[1])
    best = int(np.argmin(distances))
    if distances[best] > radius:
        return None
    return PixelCoord(int(free[best, 1]), int(free[best, 0]))


def snap_to_free(grid: GridMap, p: Tuple[float, float], radius: float) -> Optional[PixelCoord]:
    """The cell holding ``p`` when it is free, otherwise the nearest free cell within ``radius``."""
    try:
        cell = world_to_pixel(p, grid)
        if grid.is_free(cell):
            return cell
    except GridError:
        pass
    return _nearest_free(grid, p, radius)


def mark_contacts(floor_plan: GridMap, contacts: Sequence[Tuple[float, float]], radius: float) -> GridMap:
    """The floor plan with every cell whose center lies within ``radius`` of a contact point marked Occupied."""
    if not contacts:
        return floor_plan
    cols, rows = np.meshgrid(np.arange(floor_plan.width), np.arange(floor_plan.height))
    xs = (cols + 0.5) * floor_plan.resolution + floor_plan.offset.x
    ys = (rows + 0.5) * floor_plan.resolution + floor_plan.offset.y
    marked = np.zeros(floor_plan.cells.shape, dtype=bool)
    for x, y in contacts:
        marked |= np.hypot(xs - x, ys - y) <= radius
    return floor_plan.with_cells(np.where(marked, CellState.OCCUPIED, floor_plan.cells).astype(np.uint8))


def contact_point(estimate: Pose, blocked: Action, cfg: SimConfig, resolution: float) -> WorldPoint:
    """Where the obstacle that stopped ``blocked`` sits, seen from the estimated pose."""
    reach = cfg.agent_radius + 0.5 * resolution
    return WorldPoint(estimate.x + reach * blocked.dx / blocked.norm, estimate.y + reach * blocked.dy / blocked.norm)


def loc_astar_plan(
    floor_plan: GridMap,
    estimate: Pose,
    goal: Tuple[float, float],
    cfg: SimConfig,
    snap_radius: float = 1.0,
    contacts: Sequence[Tuple[float, float]] = (),
) -> Optional[List[Action]]:
    """Plans from the estimated position to the goal with A* on the inflated floor plan.

    The floor plan has no furniture, so the plan can run straight into it. Obstacles the agent has bumped into
    are added to the plan as ``contacts``, each blocking a disk of one agent radius. Returns ``None`` when the
    estimate cannot be snapped onto free space or the goal is unreachable on the plan.

    """
    known = mark_contacts(floor_plan, contacts, cfg.agent_radius)
    grid = planning_grid(known, cfg.planning_radius(floor_plan.resolution))
    start = snap_to_free(grid, estimate.position, snap_radius)
    if start is None:
        log.debug(f"no free planning cell within {snap_radius} m of the estimate {estimate}")
        return None
    try:
        goal_cell = world_to_pixel(goal, grid)
    except GridError:
        return None
    if not grid.is_free(goal_cell):
        return None
    path = astar(grid, start, goal_cell)
    if not path.found:
        return None
    points = [estimate.position] + list(path.world_points())
    points[-1] = WorldPoint(float(goal[0]), float(goal[1]))
    actions = [Action(float(b[0] - a[0]), float(b[1] - a[1])) for a, b in zip(points, points[1:])]
    return [action for action in actions if action.dx != 0.0 or action.dy != 0.0]


def shortest_length(scene: Scene, start: Tuple[float, float], goal: Tuple[float, float], cfg: SimConfig) -> float:
    """Length of the A* path on the inflated truth map, measured from the exact start to the exact goal.

    Raises:
        InfeasibleEpisodeError: if either endpoint is blocked on the planning grid or the goal is unreachable.

    """
    grid = planning_grid(scene.truth_map, cfg.planning_radius(scene.resolution))
    try:
        path = astar(grid, world_to_pixel(start, grid), world_to_pixel(goal, grid))
    except (GridError, PlanningError) as e:
        raise InfeasibleEpisodeError(f"{scene.scene_id}: {e}")
    if not path.found:
        raise InfeasibleEpisodeError(f"{scene.scene_id}: the goal {goal} is unreachable from {start}")
    points = [tuple(start)] + list(path.world_points())[1:-1] + [tuple(goal)]
    return max(path_length(points), math.hypot(goal[0] - start[0], goal[1] - start[1]))


def random_walk_chunk(rng: np.random.Generator, length: int, step_size: float = RANDOM_WALK_STEP) -> List[Action]:
    angles = rng.uniform(0.0, 2 * math.pi, size=length)
    return [Action(step_size * math.cos(a), step_size * math.sin(a)) for a in angles]


def _check_endpoints(scene: Scene, start: Pose, goal: Tuple[float, float], cfg: SimConfig):
    if disk_collides(scene.truth_map, start.x, start.y, cfg.agent_radius):
        raise InfeasibleEpisodeError(f"{scene.scene_id}: the start {start} is in collision")
    try:
        free = scene.floor_plan.is_free(world_to_pixel(goal, scene.floor_plan))
    except GridError:
        free = False
    if not free:
        raise InfeasibleEpisodeError(f"{scene.scene_id}: the goal {goal} is not free on the floor plan")


class Chunk(NamedTuple):
    actions: Optional[List[Action]]
    estimate: Optional[Pose]
    to_goal: bool = False
    """the chunk belongs to a plan that terminates exactly at the goal"""
    final: bool = False
    """the chunk holds the last action of that plan"""


class _Controller:
    """Per-episode planning state of one agent."""

    def __init__(self, spec: AgentSpec, scene: Scene, goal: WorldPoint, config: RunConfig, seed: int):
        self.spec = spec
        self.scene = scene
        self.goal = goal
        self.config = config
        self.localizer_rng = np.random.default_rng(derive_seed(seed, "localize"))
        self.walk_rng = np.random.default_rng(derive_seed(seed, "walk"))
        self.generator = torch.Generator().manual_seed(derive_seed(seed, "diffusion"))
        self.history: List[Observation] = []
        self.contacts: List[WorldPoint] = []
        self.blocked: Optional[Action] = None

    @property
    def action_horizon(self) -> int:
        if self.spec.policy is not None:
            return self.spec.policy.cfg.action_horizon
        return self.config.policy.action_horizon

    def observe(self, state: AgentState, replace_latest: bool = False):
        if self.spec.policy is None:
            return
        observation = self.spec.policy.observe(state, self.scene, self.goal, None)
        if replace_latest and self.history:
            self.history[-1] = observation
        else:
            self.history.append(observation)
        keep = self.spec.policy.cfg.context_length + 1
        del self.history[:-keep]

    def collided(self, action: Action):
        self.blocked = action

    def _note_contact(self, estimate: Pose):
        """Adds the obstacle behind the last blocked step to the agent's own copy of the floor plan."""
        blocked, self.blocked = self.blocked, None
        if blocked is None or blocked.norm == 0.0:
            return
        sim = self.config.sim
        resolution = self.scene.floor_plan.resolution
        point = contact_point(estimate, blocked, sim, resolution)
        # a contact that would cover the goal only comes from a bad estimate
        if math.dist(point, self.goal) <= sim.agent_radius + sim.planning_radius(resolution) + resolution:
            return
        self.contacts.append(point)
        log.debug(f"{self.spec.name}: marked a contact at ({point.x:.2f}, {point.y:.2f})")

    def plan(self, state: AgentState) -> Chunk:
        kind = self.spec.kind
        estimate = self.spec.localizer.localize(state.pose, self.localizer_rng) if kind.uses_localizer else None
        if kind is AgentKind.RANDOM_WALK:
            return Chunk(random_walk_chunk(self.walk_rng, self.action_horizon), None)
        elif kind is AgentKind.LOC_ASTAR:
            assert estimate is not None
            self._note_contact(estimate)
            actions = loc_astar_plan(
                self.scene.floor_plan,
                estimate,
                self.goal,
                self.config.sim,
                self.config.benchmark.snap_radius,
                self.contacts,
            )
            if actions is None:
                return Chunk(None, estimate)
            return Chunk(actions[: self.action_horizon], estimate, True, len(actions) <= self.action_horizon)
        policy = self.spec.policy
        assert policy is not None
        self.history[-1] = self.history[-1]._replace(pose=estimate)
        plan = policy.act(self.history, self.scene.floor_plan, self.generator, self.spec.mask_floorplan)
        log.debug(f"{self.spec.name}: predicted {plan.distance_estimate:.2f} m to go from {plan.pose_estimate}")
        return Chunk(plan.actions, estimate if estimate is not None else plan.pose_estimate)


def run_episode(
    spec: AgentSpec,
    scene: Scene,
    start: Pose,
    goal: Tuple[float, float],
    config: RunConfig,
    seed: int,
    pair_index: int = 0,
    shortest: Optional[float] = None,
    step_log: Optional[StepLog] = None,
) -> EvalRecord:
    """Runs one agent from ``start`` until it stops within ``tau_d`` of the goal, exceeds the travel cap, or
    spends its replan budget.

    Arrival is checked after every step. Loc-A* is the exception: its plans end at the goal, and it follows them
    to their last action even after it comes within ``tau_d``. After a blocked step Loc-A* remembers the obstacle
    it hit and plans around it from then on.

    Raises:
        InfeasibleEpisodeError: if the start is in collision, the goal is not free on the floor plan, or the goal
            cannot be reached on the truth map at all.

    """
    sim_cfg = config.sim
    goal = WorldPoint(float(goal[0]), float(goal[1]))
    _check_endpoints(scene, start, goal, sim_cfg)
    if shortest is None:
        shortest = shortest_length(scene, start.position, goal, sim_cfg)
    simulator = Simulator(scene, sim_cfg, start)
    controller = _Controller(spec, scene, goal, config, seed)
    controller.observe(simulator.state)

    def arrived() -> bool:
        return simulator.state.distance_to(goal) <= sim_cfg.tau_d

    def over_travel() -> bool:
        return simulator.state.traveled > sim_cfg.max_travel

    replans = 0
    # Loc-A* keeps following a plan to the goal even once it is within tau_d
    pending = False
    while replans < config.benchmark.replan_budget and not over_travel() and (pending or not arrived()):
        chunk = controller.plan(simulator.state)
        replans += 1
        pending = False
        state = simulator.state
        if step_log is not None:
            step_log.entries.append(
                StepEntry(state.pose.x, state.pose.y, state.pose.theta, None, False, True, chunk.estimate)
            )
        if not chunk.actions:
            continue
        for action in chunk.actions:
            collided = simulator.step(action)
            state = simulator.state
            if step_log is not None:
                step_log.entries.append(
                    StepEntry(state.pose.x, state.pose.y, state.pose.theta, action, collided, False, None)
                )
            if collided:
                simulator.recover()
                controller.collided(action)
                controller.observe(simulator.state)
                break
            controller.observe(state)
            if over_travel() or (arrived() and not chunk.to_goal):
                break
        else:
            pending = chunk.to_goal and not chunk.final
    final = simulator.state
    log.debug(
        f"{spec.name} on {scene.scene_id}#{pair_index}: {final.distance_to(goal):.3f} m left, "
        f"{final.collision_count} collisions, {replans} replans"
    )
    return EvalRecord(
        method=spec.name,
        scene_id=scene.scene_id,
        pair_index=pair_index,
        final_distance=final.distance_to(goal),
        collisions=final.collision_count,
        traveled=final.traveled,
        shortest=shortest,
        steps=final.step_count,
        replans=replans,
    )


class NoisyPlan(NamedTuple):
    estimate: Pose
    positions: np.ndarray
    """the true start position followed by the open-loop positions of the full predicted action sequence"""


def diagnose_pose_noise(
    policy: FloDiffPolicy,
    scene: Scene,
    pose: Pose,
    goal: Tuple[float, float],
    pos_var: float,
    orient_mode: OrientationMode,
    samples: int,
    seed: int,
) -> List[NoisyPlan]:
    """Plans once from each of ``samples`` noisy copies of ``pose`` and returns the predicted paths."""
    if policy.variant is not Variant.LOC:
        raise AgentSpecError("pose-noise diagnostics need a localized policy")
    rng = np.random.default_rng(derive_seed(seed, "pose-noise"))
    generator = torch.Generator().manual_seed(derive_seed(seed, "pose-noise", "diffusion"))
    state = AgentState(pose)
    plans: List[NoisyPlan] = []
    for _ in range(samples):
        estimate = noisy_pose(pose, pos_var, orient_mode, rng)
        observation = policy.observe(state, scene, goal, estimate)
        plan = policy.plan([observation], scene.floor_plan, generator)
        steps = np.array([[a.dx, a.dy] for a in plan.actions], dtype=np.float64).reshape(-1, 2)
        positions = np.vstack([[pose.x, pose.y], np.array([pose.x, pose.y]) + np.cumsum(steps, axis=0)])
        plans.append(NoisyPlan(estimate, positions))
    return plans


def step_log_path(directory: Path, record: EvalRecord) -> Path:
    return directory / record.method / f"{record.scene_id}-{record.pair_index:03d}.jsonl"


def run_logged_episode(
    spec: AgentSpec,
    scene: Scene,
    start: Pose,
    goal: Tuple[float, float],
    config: RunConfig,
    seed: int,
    pair_index: int = 0,
    shortest: Optional[float] = None,
) -> Tuple[EvalRecord, StepLog]:
    step_log = StepLog(spec.name, scene.scene_id, pair_index, start, WorldPoint(float(goal[0]), float(goal[1])))
    record = run_episode(spec, scene, start, goal, config, seed, pair_index, shortest, step_log)
    return record, step_log
