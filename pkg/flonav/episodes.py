"""Demonstration episodes: sampling, storage, replay verification and summary statistics."""

import json
import math
import statistics
from argparse import ArgumentParser, Namespace
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from logging import getLogger
from pathlib import Path
from typing import Dict, Iterable, List, NamedTuple, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from .cache import planning_grid
from .config import GeneratorConfig, RunConfig, SimConfig, derive_seed
from .errors import FlonavError
from .floorgrid import (
    GridError,
    GridMap,
    PixelCoord,
    Scene,
    SizeClass,
    WorldPoint,
    free_components,
    load_scenes,
    pixel_to_world,
)
from .planner import Action, PlanningError, Pose, Trajectory, path_length, path_to_actions, plan_trajectory
from .plugins import Command
from .simulator import replay

log = getLogger("episodes")

BASE_EPISODES: Dict[SizeClass, int] = {SizeClass.SMALL: 150, SizeClass.MEDIUM: 180, SizeClass.LARGE: 200}


class DatasetError(FlonavError):
    pass


class DatasetFormatError(DatasetError):
    pass


class SamplingError(DatasetError):
    pass


@dataclass(frozen=True)
class Episode:
    scene_id: str
    start: Pose
    goal: WorldPoint
    trajectory: Trajectory
    actions: Tuple[Action, ...]
    shortest_length: float

    def __post_init__(self):
        if len(self.actions) != len(self.trajectory) - 1:
            raise DatasetError(
                f"episode in {self.scene_id} has {len(self.trajectory)} poses but {len(self.actions)} actions"
            )

    @property
    def straight_line_distance(self) -> float:
        return math.hypot(self.goal.x - self.start.x, self.goal.y - self.start.y)

    def to_json(self) -> Dict:
        return {
            "scene_id": self.scene_id,
            "start": {"x": self.start.x, "y": self.start.y, "theta": self.start.theta},
            "goal": {"x": self.goal.x, "y": self.goal.y},
            "positions": self.trajectory.positions.tolist(),
            "orientations": self.trajectory.orientations.tolist(),
            "actions": [[a.dx, a.dy] for a in self.actions],
            "shortest_length": self.shortest_length,
        }

    @staticmethod
    def from_json(record: Dict) -> "Episode":
        start = record["start"]
        goal = record["goal"]
        return Episode(
            scene_id=str(record["scene_id"]),
            start=Pose(float(start["x"]), float(start["y"]), float(start["theta"])),
            goal=WorldPoint(float(goal["x"]), float(goal["y"])),
            trajectory=Trajectory.from_arrays(
                np.array(record["positions"], dtype=np.float64), np.array(record["orientations"], dtype=np.float64)
            ),
            actions=tuple(Action(float(dx), float(dy)) for dx, dy in record["actions"]),
            shortest_length=float(record["shortest_length"]),
        )


def _cell_centers(grid: GridMap, cells: np.ndarray) -> np.ndarray:
    """World coordinates of the centers of ``(row, col)`` cells."""
    return (cells[:, ::-1] + 0.5) * grid.resolution + np.array(grid.offset)


def sample_episode(
    scene: Scene,
    rng_seed: int,
    cfg: SimConfig = SimConfig(),
    min_distance: float = 3.0,
    max_attempts: int = 2000,
) -> Episode:
    """Samples a start/goal pair on the inflated truth map and plans the demonstration between them.

    Both endpoints are drawn uniformly from free cells of the truth map inflated by the planning clearance and
    must lie at least ``min_distance`` apart in the same connected region.

    Raises:
        SamplingError: if the scene cannot hold such a pair or the rejection budget runs out.

    """
    grid = planning_grid(scene.truth_map, cfg.planning_radius(scene.resolution))
    labels, count = free_components(grid)
    cells = np.argwhere(labels > 0)
    if len(cells) < 2:
        raise SamplingError(f"{scene.scene_id}: fewer than two free cells after inflation")
    centers = _cell_centers(grid, cells)
    cell_labels = labels[cells[:, 0], cells[:, 1]]
    spans = []
    for label in range(1, count + 1):
        members = centers[cell_labels == label]
        spans.append(float(np.hypot(*(members.max(axis=0) - members.min(axis=0)))))
    if max(spans) < min_distance:
        raise SamplingError(
            f"{scene.scene_id}: no two free cells are {min_distance} m apart (widest region spans {max(spans):.2f} m)"
        )
    rng = np.random.default_rng(rng_seed)
    for _ in range(max_attempts):
        a, b = rng.integers(len(cells), size=2)
        if cell_labels[a] != cell_labels[b]:
            continue
        if math.hypot(*(centers[b] - centers[a])) < min_distance:
            continue
        start = PixelCoord(int(cells[a, 1]), int(cells[a, 0]))
        goal = PixelCoord(int(cells[b, 1]), int(cells[b, 0]))
        trajectory = plan_trajectory(grid, start, goal)
        if trajectory is None:
            log.warning(f"{scene.scene_id}: {start} and {goal} share a region but A* found no path")
            continue
        return Episode(
            scene_id=scene.scene_id,
            start=trajectory.start,
            goal=pixel_to_world(goal, grid),
            trajectory=trajectory,
            actions=tuple(path_to_actions(trajectory)),
            shortest_length=path_length(trajectory),
        )
    raise SamplingError(f"{scene.scene_id}: no feasible start/goal pair found in {max_attempts} attempts")


def episodes_per_scene(size_class: Union[str, SizeClass], scale_factor: int = 10) -> int:
    if scale_factor < 1:
        raise DatasetError(f"scale factor must be at least 1, got {scale_factor}")
    return max(1, BASE_EPISODES[SizeClass.parse(size_class)] // scale_factor)


class DistanceStats(NamedTuple):
    min: float
    max: float
    mean: float
    median: float


@dataclass(frozen=True)
class DatasetStats:
    count: int
    straight_line: DistanceStats
    travel: DistanceStats

    def format_table(self) -> str:
        rows = [("", "min", "max", "mean", "median")]
        for label, stats in (("straight-line distance (m)", self.straight_line), ("travel distance (m)", self.travel)):
            rows.append((label, *(f"{value:.2f}" for value in stats)))
        widths = [max(len(row[i]) for row in rows) for i in range(5)]
        lines = [f"episodes: {self.count}"]
        for row in rows:
            lines.append("  ".join(cell.ljust(widths[0]) if i == 0 else cell.rjust(widths[i]) for i, cell in enumerate(row)))
        return "\n".join(lines)


def _distance_stats(values: Sequence[float]) -> DistanceStats:
    return DistanceStats(min(values), max(values), statistics.fmean(values), statistics.median(values))


def compute_stats(episodes: Sequence[Episode]) -> DatasetStats:
    if not episodes:
        raise DatasetError("statistics of an empty dataset are undefined")
    return DatasetStats(
        count=len(episodes),
        straight_line=_distance_stats([episode.straight_line_distance for episode in episodes]),
        travel=_distance_stats([episode.shortest_length for episode in episodes]),
    )


def save_dataset(episodes: Iterable[Episode], path: Union[str, Path]):
    """Writes one JSON object per line; floats keep their shortest round-trip representation."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for episode in episodes:
            f.write(json.dumps(episode.to_json(), allow_nan=False))
            f.write("\n")


def load_dataset(path: Union[str, Path]) -> List[Episode]:
    """Reads a dataset written by :func:`save_dataset`.

    Raises:
        DatasetFormatError: naming the file and the 1-based line of the first malformed record.

    """
    path = Path(path)
    if not path.exists():
        raise DatasetFormatError(f"dataset {path} does not exist")
    episodes: List[Episode] = []
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            try:
                episodes.append(Episode.from_json(json.loads(line)))
            except (ValueError, KeyError, TypeError, IndexError, PlanningError, DatasetError) as e:
                raise DatasetFormatError(f"{path}:{line_number}: malformed episode record: {e!s}")
    return episodes


def _scene_episodes(job: Tuple[Scene, int, int, SimConfig, GeneratorConfig]) -> List[Episode]:
    scene, count, seed, sim, generator = job
    return [
        sample_episode(
            scene,
            derive_seed(seed, "episode", scene.scene_id, index),
            sim,
            min_distance=generator.min_pair_distance,
            max_attempts=generator.max_sampling_attempts,
        )
        for index in range(count)
    ]


def generate_dataset(scenes: Sequence[Scene], config: RunConfig) -> List[Episode]:
    """Samples ``episodes_per_scene`` demonstrations for every scene, in scene order.

    Each episode has its own seed derived from the master seed, the scene id and its index, so the result does
    not depend on the number of workers.

    """
    jobs = [
        (scene, episodes_per_scene(scene.size_class, config.generator.scale_factor), config.seed, config.sim,
         config.generator)
        for scene in scenes
    ]
    episodes: List[Episode] = []
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as executor:
            results: Iterable[List[Episode]] = executor.map(_scene_episodes, jobs)
            for batch in tqdm(results, desc="sampling episodes", unit=" scenes", leave=False, total=len(jobs)):
                episodes.extend(batch)
    else:
        for job in tqdm(jobs, desc="sampling episodes", unit=" scenes", leave=False):
            episodes.extend(_scene_episodes(job))
    return episodes


class ReplayReport(NamedTuple):
    scene_id: str
    index: int
    collisions: int
    terminal_error: float
    """distance from the replay's final position to the episode goal, in meters"""
    ok: bool


def verify_dataset(episodes: Sequence[Episode], scenes: Dict[str, Scene], cfg: SimConfig) -> List[ReplayReport]:
    """Replays every episode on its scene's truth map from its start pose."""
    reports: List[ReplayReport] = []
    for index, episode in enumerate(tqdm(episodes, desc="replaying episodes", unit=" episodes", leave=False)):
        if episode.scene_id not in scenes:
            raise DatasetError(f"episode {index} refers to unknown scene {episode.scene_id!r}")
        scene = scenes[episode.scene_id]
        final = replay(episode.start, episode.actions, scene, cfg)
        error = final.distance_to(episode.goal)
        ok = final.collision_count == 0 and error <= scene.resolution
        if not ok:
            log.warning(
                f"{episode.scene_id} episode {index}: {final.collision_count} collisions, ends {error:.3f} m from goal"
            )
        reports.append(ReplayReport(episode.scene_id, index, final.collision_count, error, ok))
    return reports


def dataset_paths(output: Path, name: str) -> Tuple[Path, Path]:
    directory = output / "datasets"
    return directory / f"{name}.jsonl", directory / f"{name}.stats.txt"


class GenEpisodesCommand(Command):
    name = "gen-episodes"
    help = "sample planner demonstrations into OUTPUT/datasets/NAME.jsonl"

    def __init_arguments__(self, parser: ArgumentParser):
        parser.add_argument("--scenes", type=Path, default=None, help="scene directory (default: OUTPUT/scenes)")
        parser.add_argument(
            "--split", choices=("train", "test", "all"), default="train", help="which scenes to sample from"
        )
        parser.add_argument("--name", type=str, default="episodes", help="dataset name (default: episodes)")
        parser.add_argument("--verify", action="store_true", help="replay every episode and fail on any collision")

    def run(self, args: Namespace) -> int:
        config = self.run_config(args)
        scenes_dir = args.scenes if args.scenes is not None else args.output / "scenes"
        scenes = load_scenes(scenes_dir, args.split, config.generator.test_fraction)
        if not scenes:
            raise GridError(f"{scenes_dir} holds no {args.split} scenes")
        episodes = generate_dataset(scenes, config)
        dataset_path, stats_path = dataset_paths(args.output, args.name)
        dataset_path.parent.mkdir(parents=True, exist_ok=True)
        save_dataset(episodes, dataset_path)
        if episodes:
            stats_path.write_text(compute_stats(episodes).format_table() + "\n", encoding="utf-8")
        log.info(f"wrote {len(episodes)} episodes from {len(scenes)} scenes to {dataset_path}")
        if args.verify:
            reports = verify_dataset(episodes, {scene.scene_id: scene for scene in scenes}, config.sim)
            failures = sum(1 for report in reports if not report.ok)
            if failures:
                raise DatasetError(f"{failures} of {len(reports)} episodes failed replay verification")
            log.info(f"all {len(reports)} episodes replay without collision")
        return 0


class StatsCommand(Command):
    name = "stats"
    help = "print distance statistics of a dataset"

    def __init_arguments__(self, parser: ArgumentParser):
        parser.add_argument("dataset", type=Path, help="dataset JSONL file")

    def run(self, args: Namespace) -> int:
        self.run_config(args)
        print(compute_stats(load_dataset(args.dataset)).format_table())
        return 0
