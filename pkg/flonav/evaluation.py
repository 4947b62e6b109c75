"""Benchmark runner and navigation metrics.

Success follows the simulator's judgment: an episode succeeds under ``(tau_d, tau_c)`` when it ends within
``tau_d`` meters of the goal, with at most ``tau_c`` collisions (``None`` is unbounded), inside the travel cap.

"""

import csv
import json
import math
from argparse import ArgumentParser, Namespace
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from logging import getLogger
from pathlib import Path
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

from tqdm import tqdm

from .agents import (
    AgentKind,
    AgentSpec,
    AgentSpecError,
    EvalRecord,
    InfeasibleEpisodeError,
    run_episode,
    run_logged_episode,
    step_log_path,
)
from .config import BenchmarkConfig, CollisionLimit, RunConfig, SimConfig, TrainConfig, derive_seed, format_limit
from .episodes import Episode, SamplingError, sample_episode
from .errors import FlonavError
from .floorgrid import Scene, load_scenes
from .plugins import Command
from .policy import checkpoint_name, load_checkpoint
from .simulator import GroundTruthLocalizer, NoisyLocalizer, OrientationMode

log = getLogger("evaluation")

TAU_D: Tuple[float, ...] = (0.25, 0.30, 0.35)
TAU_C: Tuple[CollisionLimit, ...] = (10, 30, 50, None)
COLLISION_TAU_D = 0.30


class MetricError(FlonavError):
    pass


def _check(records: Sequence[EvalRecord]):
    if not records:
        raise MetricError("metrics over an empty record set are undefined")


def sr(
    records: Sequence[EvalRecord], tau_d: float, tau_c: CollisionLimit, max_travel: float = SimConfig.max_travel
) -> float:
    """Fraction of successful episodes."""
    _check(records)
    return sum(1 for r in records if r.succeeded(tau_d, tau_c, max_travel)) / len(records)


def spl(
    records: Sequence[EvalRecord], tau_d: float, tau_c: CollisionLimit, max_travel: float = SimConfig.max_travel
) -> float:
    """Success weighted by ``shortest / max(traveled, shortest)``."""
    _check(records)
    total = 0.0
    for r in records:
        if r.shortest <= 0:
            raise MetricError(f"{r.scene_id}#{r.pair_index}: shortest path length must be positive, got {r.shortest}")
        if r.succeeded(tau_d, tau_c, max_travel):
            total += r.shortest / max(r.traveled, r.shortest)
    return total / len(records)


def mean_collisions(
    records: Sequence[EvalRecord], tau_d: float, tau_c: CollisionLimit, max_travel: float = SimConfig.max_travel
) -> Optional[float]:
    """Mean collision count over successful episodes; ``None`` when nothing succeeded."""
    successes = [r.collisions for r in records if r.succeeded(tau_d, tau_c, max_travel)]
    if not successes:
        return None
    return math.fsum(successes) / len(successes)


class ResultCell(NamedTuple):
    method: str
    tau_d: float
    tau_c: CollisionLimit
    sr: float
    """percent"""
    spl: float
    """percent"""
    mean_collisions: Optional[float]
    n_episodes: int


CSV_HEADER = ("method", "tau_d", "tau_c", "sr", "spl", "mean_collisions", "n_episodes")


@dataclass
class ResultTable:
    cells: List[ResultCell]
    records: List[EvalRecord] = field(default_factory=list)
    skipped: List[Tuple[str, str]] = field(default_factory=list)
    """``(scene_id, reason)`` for every scene left out of the benchmark"""

    @property
    def methods(self) -> List[str]:
        return list(dict.fromkeys(cell.method for cell in self.cells))

    def cell(self, method: str, tau_d: float, tau_c: CollisionLimit) -> ResultCell:
        for c in self.cells:
            if c.method == method and c.tau_d == tau_d and c.tau_c == tau_c:
                return c
        raise KeyError((method, tau_d, tau_c))

    def save_csv(self, path: Union[str, Path]):
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(CSV_HEADER)
            for c in self.cells:
                writer.writerow(
                    (
                        c.method,
                        f"{c.tau_d:.2f}",
                        format_limit(c.tau_c),
                        f"{c.sr:.2f}",
                        f"{c.spl:.2f}",
                        "" if c.mean_collisions is None else f"{c.mean_collisions:.2f}",
                        c.n_episodes,
                    )
                )

    def save_json(self, path: Union[str, Path]):
        document = {
            "cells": [{**c._asdict(), "tau_c": format_limit(c.tau_c)} for c in self.cells],
            "records": [r.to_json() for r in self.records],
            "skipped": [{"scene_id": scene_id, "reason": reason} for scene_id, reason in self.skipped],
        }
        with open(path, "w", encoding="utf-8") as f:
            json.dump(document, f, indent=2, allow_nan=False)
            f.write("\n")

    def format_table(self, tau_c: CollisionLimit = 50) -> str:
        """SR/SPL per method and ``tau_d`` at one collision threshold."""
        rows = [f"{'method':<24}" + "".join(f"  SR@{d:.2f}  SPL@{d:.2f}" for d in TAU_D)]
        for method in self.methods:
            line = f"{method:<24}"
            for d in TAU_D:
                c = self.cell(method, d, tau_c)
                line += f"  {c.sr:7.2f}  {c.spl:8.2f}"
            rows.append(line)
        return "\n".join(rows)

    def format_collisions(self, tau_d: float = COLLISION_TAU_D) -> str:
        """Mean collisions of successful episodes per method and ``tau_c`` at one distance threshold."""
        rows = [f"{'method':<24}" + "".join(f"  {'tau_c=' + format_limit(c):>10}" for c in TAU_C)]
        for method in self.methods:
            line = f"{method:<24}"
            for tau_c in TAU_C:
                value = self.cell(method, tau_d, tau_c).mean_collisions
                line += f"  {'-' if value is None else format(value, '.2f'):>10}"
            rows.append(line)
        return "\n".join(rows)


def aggregate(
    records: Sequence[EvalRecord],
    methods: Sequence[str],
    max_travel: float = SimConfig.max_travel,
    tau_ds: Sequence[float] = TAU_D,
    tau_cs: Sequence[CollisionLimit] = TAU_C,
) -> ResultTable:
    """Sweeps every ``(tau_d, tau_c)`` pair; cells are ordered by ``tau_c``, then method, then ``tau_d``."""
    by_method: Dict[str, List[EvalRecord]] = {method: [] for method in methods}
    for record in records:
        by_method.setdefault(record.method, []).append(record)
    cells: List[ResultCell] = []
    for tau_c in tau_cs:
        for method, subset in by_method.items():
            if not subset:
                continue
            for tau_d in tau_ds:
                cells.append(
                    ResultCell(
                        method,
                        tau_d,
                        tau_c,
                        100.0 * sr(subset, tau_d, tau_c, max_travel),
                        100.0 * spl(subset, tau_d, tau_c, max_travel),
                        mean_collisions(subset, tau_d, tau_c, max_travel),
                        len(subset),
                    )
                )
    return ResultTable(cells, list(records))


class EpisodePair(NamedTuple):
    scene_id: str
    index: int
    episode: Episode


def sample_pairs(scene: Scene, count: int, config: RunConfig) -> List[EpisodePair]:
    """Start/goal pairs shared by every method, drawn like the demonstrations but from their own seed stream."""
    return [
        EpisodePair(
            scene.scene_id,
            index,
            sample_episode(
                scene,
                derive_seed(config.seed, "pair", scene.scene_id, index),
                config.sim,
                min_distance=config.generator.min_pair_distance,
                max_attempts=config.generator.max_sampling_attempts,
            ),
        )
        for index in range(count)
    ]


def _stop_config(config: RunConfig, tau_ds: Sequence[float]) -> RunConfig:
    """Agents stop at the tightest distance threshold of the sweep; looser thresholds judge the same run."""
    return config.with_overrides({("sim", "tau_d"): min(tau_ds)})


Job = Tuple[AgentSpec, Scene, EpisodePair, RunConfig, Optional[Path]]


def _run_job(job: Job) -> EvalRecord:
    spec, scene, pair, config, log_dir = job
    episode = pair.episode
    seed = derive_seed(config.seed, "run", pair.scene_id, pair.index)
    try:
        if log_dir is None:
            return run_episode(
                spec, scene, episode.start, episode.goal, config, seed, pair.index, episode.shortest_length
            )
        record, step_log = run_logged_episode(
            spec, scene, episode.start, episode.goal, config, seed, pair.index, episode.shortest_length
        )
    except InfeasibleEpisodeError as e:
        raise MetricError(f"benchmark pair became infeasible: {e}")
    step_log.save(step_log_path(log_dir, record))
    return record


def run_benchmark(
    specs: Sequence[AgentSpec],
    scenes: Sequence[Scene],
    config: RunConfig,
    step_log_dir: Optional[Path] = None,
    tau_ds: Sequence[float] = TAU_D,
    tau_cs: Sequence[CollisionLimit] = TAU_C,
) -> ResultTable:
    """Runs every agent on the same ``pairs_per_scene`` start/goal pairs of every scene.

    Scenes that cannot hold enough feasible pairs are skipped with a warning and listed in the table. Records are
    ordered by method, scene and pair whatever the worker count.

    Raises:
        MetricError: if no scene is given or every scene was skipped.

    """
    if not scenes:
        raise MetricError("the benchmark needs at least one scene")
    names = [spec.name for spec in specs]
    if len(set(names)) != len(names):
        raise AgentSpecError(f"agent names must be unique, got {names}")
    run_config = _stop_config(config, tau_ds)
    pairs: Dict[str, List[EpisodePair]] = {}
    skipped: List[Tuple[str, str]] = []
    for scene in tqdm(scenes, desc="sampling benchmark pairs", unit=" scenes", leave=False):
        try:
            pairs[scene.scene_id] = sample_pairs(scene, config.benchmark.pairs_per_scene, config)
        except SamplingError as e:
            log.warning(f"skipping {scene.scene_id}: {e}")
            skipped.append((scene.scene_id, str(e)))
    if not pairs:
        raise MetricError("every benchmark scene was skipped")
    jobs: List[Job] = [
        (spec, scene, pair, run_config, step_log_dir)
        for spec in specs
        for scene in scenes
        if scene.scene_id in pairs
        for pair in pairs[scene.scene_id]
    ]
    records: List[EvalRecord] = []
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as executor:
            results: Iterable[EvalRecord] = executor.map(_run_job, jobs)
            records.extend(tqdm(results, desc="running episodes", unit=" episodes", leave=False, total=len(jobs)))
    else:
        for job in tqdm(jobs, desc="running episodes", unit=" episodes", leave=False):
            records.append(_run_job(job))
    table = aggregate(records, names, config.sim.max_travel, tau_ds, tau_cs)
    table.skipped = skipped
    return table


METHOD_NAMES = (
    "loc-astar-gt",
    "loc-astar-noisy",
    "flodiff-loc-gt",
    "flodiff-loc-noisy",
    "flodiff-naive",
    "flodiff-loc-masked",
    "random-walk",
)


def build_specs(methods: Sequence[str], checkpoints: Path, benchmark: BenchmarkConfig) -> List[AgentSpec]:
    """Agent specifications for benchmark method names, loading each needed checkpoint once."""
    unknown = [m for m in methods if m not in METHOD_NAMES]
    if unknown:
        raise MetricError(f"unknown methods {', '.join(unknown)}; expected some of {', '.join(METHOD_NAMES)}")
    noisy = NoisyLocalizer(benchmark.noise_variance, OrientationMode.KEEP)
    loaded = {}

    def policy(variant: str, masked: bool = False):
        name = checkpoint_name(TrainConfig(variant=variant, mask_floorplan=masked))
        if name not in loaded:
            loaded[name] = load_checkpoint(checkpoints / f"{name}.json")
        return loaded[name]

    specs: List[AgentSpec] = []
    for method in methods:
        if method == "loc-astar-gt":
            specs.append(AgentSpec(method, AgentKind.LOC_ASTAR, GroundTruthLocalizer()))
        elif method == "loc-astar-noisy":
            specs.append(AgentSpec(method, AgentKind.LOC_ASTAR, noisy))
        elif method == "flodiff-loc-gt":
            specs.append(AgentSpec(method, AgentKind.FLODIFF_LOC, GroundTruthLocalizer(), policy("loc")))
        elif method == "flodiff-loc-noisy":
            specs.append(AgentSpec(method, AgentKind.FLODIFF_LOC, noisy, policy("loc")))
        elif method == "flodiff-naive":
            specs.append(AgentSpec(method, AgentKind.FLODIFF_NAIVE, policy=policy("naive")))
        elif method == "flodiff-loc-masked":
            specs.append(
                AgentSpec(
                    method, AgentKind.FLODIFF_LOC, GroundTruthLocalizer(), policy("loc", True), mask_floorplan=True
                )
            )
        else:
            specs.append(AgentSpec(method, AgentKind.RANDOM_WALK))
    return specs


class EvalCommand(Command):
    name = "eval"
    help = "benchmark agents into OUTPUT/results/NAME.csv and NAME.json"

    def __init_arguments__(self, parser: ArgumentParser):
        parser.add_argument("--scenes", type=Path, default=None, help="scene directory (default: OUTPUT/scenes)")
        parser.add_argument(
            "--checkpoints", type=Path, default=None, help="checkpoint directory (default: OUTPUT/checkpoints)"
        )
        parser.add_argument("--name", type=str, default="benchmark", help="result name (default: benchmark)")
        parser.add_argument(
            "--step-logs",
            action="store_true",
            help="write one JSON-lines step log per episode to OUTPUT/results/NAME-steps/",
        )

    def run(self, args: Namespace) -> int:
        config = self.run_config(args)
        scenes_dir = args.scenes if args.scenes is not None else args.output / "scenes"
        checkpoints = args.checkpoints if args.checkpoints is not None else args.output / "checkpoints"
        bench = config.benchmark
        scenes = load_scenes(scenes_dir, bench.eval_split, config.generator.test_fraction)
        if not scenes:
            raise MetricError(f"{scenes_dir} holds no {bench.eval_split} scenes")
        methods = [m.strip() for m in bench.methods.split(",") if m.strip()]
        specs = build_specs(methods, checkpoints, bench)
        results = args.output / "results"
        results.mkdir(parents=True, exist_ok=True)
        step_logs = results / f"{args.name}-steps" if args.step_logs else None
        table = run_benchmark(specs, scenes, config, step_logs)
        table.save_csv(results / f"{args.name}.csv")
        table.save_json(results / f"{args.name}.json")
        print(table.format_table())
        print()
        print(table.format_collisions())
        log.info(f"wrote {len(table.records)} episode records to {results / f'{args.name}.csv'}")
        return 0
