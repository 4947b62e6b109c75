import csv
import dataclasses
import json

import numpy as np
import pytest

from flonav.agents import AgentKind, AgentSpec, AgentSpecError, EvalRecord, StepLog
from flonav.config import BenchmarkConfig, GeneratorConfig, RunConfig
from flonav.evaluation import (
    CSV_HEADER,
    TAU_C,
    TAU_D,
    MetricError,
    aggregate,
    build_specs,
    mean_collisions,
    run_benchmark,
    sample_pairs,
    spl,
    sr,
)
from flonav.floorgrid import Scene, SizeClass, synth_scene
from flonav.policy import CheckpointError
from flonav.simulator import GroundTruthLocalizer, NoisyLocalizer

from .conftest import make_scene, walled_cells


@pytest.fixture
def records():
    return [
        EvalRecord("a", "s", 0, 0.20, 0, 5.0, 5.0),
        EvalRecord("a", "s", 1, 0.28, 20, 10.0, 5.0),
        EvalRecord("a", "s", 2, 0.33, 60, 6.0, 4.0),
        EvalRecord("a", "s", 3, 2.00, 5, 1.0, 4.0),
        EvalRecord("b", "s", 0, 0.10, 0, 4.0, 5.0),
        EvalRecord("b", "s", 1, 0.10, 100, 5.0, 5.0),
    ]


def test_success_rate(records):
    a = [r for r in records if r.method == "a"]
    assert sr(a, 0.25, None) == 0.25
    assert sr(a, 0.30, None) == 0.5
    assert sr(a, 0.35, None) == 0.75
    assert sr(a, 0.35, 50) == 0.5
    assert sr(a, 0.35, 10) == 0.25


def test_spl(records):
    a = [r for r in records if r.method == "a"]
    assert spl(a, 0.30, None) == pytest.approx((1.0 + 0.5) / 4)
    assert spl(a, 0.35, None) == pytest.approx((1.0 + 0.5 + 4.0 / 6.0) / 4)
    b = [r for r in records if r.method == "b"]
    # traveling less than the shortest path counts as optimal
    assert spl(b, 0.30, None) == pytest.approx(1.0)


def test_mean_collisions(records):
    a = [r for r in records if r.method == "a"]
    assert mean_collisions(a, 0.30, None) == 10.0
    assert mean_collisions(a, 0.30, 10) == 0.0
    assert mean_collisions(a, 0.10, None) is None


def test_metric_errors(records):
    with pytest.raises(MetricError):
        sr([], 0.3, None)
    with pytest.raises(MetricError):
        spl([dataclasses.replace(records[0], shortest=0.0)], 0.3, None)


def test_metrics_are_monotone(records):
    table = aggregate(records, ["a", "b"])
    for method in ("a", "b"):
        for tau_c in TAU_C:
            srs = [table.cell(method, d, tau_c).sr for d in TAU_D]
            assert srs == sorted(srs)
        for d in TAU_D:
            srs = [table.cell(method, d, c).sr for c in TAU_C]
            assert srs == sorted(srs)
    for cell in table.cells:
        assert 0.0 <= cell.spl <= cell.sr <= 100.0


def test_aggregate_order(records):
    table = aggregate(records, ["b", "a", "c"])
    assert len(table.cells) == 2 * len(TAU_D) * len(TAU_C)
    assert [(c.tau_c, c.method, c.tau_d) for c in table.cells[:6]] == [
        (10, "b", 0.25),
        (10, "b", 0.30),
        (10, "b", 0.35),
        (10, "a", 0.25),
        (10, "a", 0.30),
        (10, "a", 0.35),
    ]
    assert table.methods == ["b", "a"]
    assert table.cell("a", 0.35, None).n_episodes == 4
    with pytest.raises(KeyError):
        table.cell("c", 0.3, None)


def test_result_files(tmp_path, records):
    table = aggregate(records, ["a", "b"])
    table.save_csv(tmp_path / "results.csv")
    with open(tmp_path / "results.csv", newline="") as f:
        rows = list(csv.reader(f))
    assert tuple(rows[0]) == CSV_HEADER
    assert len(rows) == 1 + len(table.cells)
    unbounded = [row for row in rows[1:] if row[2] == "inf"]
    assert len(unbounded) == 2 * len(TAU_D)
    assert ["a", "0.25", "inf", "25.00", "25.00", "0.00", "4"] in rows
    assert ["b", "0.25", "10", "50.00", "50.00", "0.00", "2"] in rows
    table.save_json(tmp_path / "results.json")
    document = json.loads((tmp_path / "results.json").read_text())
    assert len(document["records"]) == len(records)
    assert {cell["tau_c"] for cell in document["cells"]} == {"10", "30", "50", "inf"}
    text = table.format_table()
    assert "SR@0.25" in text and text.splitlines()[1].startswith("a")
    assert "tau_c=inf" in table.format_collisions()


def test_sample_pairs_are_reproducible(empty_room):
    config = RunConfig(seed=4, generator=GeneratorConfig(min_pair_distance=2.0))
    first = sample_pairs(empty_room, 3, config)
    assert first == sample_pairs(empty_room, 3, config)
    assert [pair.index for pair in first] == [0, 1, 2]
    assert all(pair.episode.straight_line_distance >= 2.0 for pair in first)


def benchmark_config(**benchmark) -> RunConfig:
    return RunConfig(
        seed=1,
        generator=GeneratorConfig(min_pair_distance=2.0),
        benchmark=BenchmarkConfig(pairs_per_scene=2, replan_budget=10, **benchmark),
    )


def test_run_benchmark(tmp_path, empty_room):
    specs = [AgentSpec("loc-astar-gt", AgentKind.LOC_ASTAR), AgentSpec("random-walk", AgentKind.RANDOM_WALK)]
    table = run_benchmark(specs, [empty_room], benchmark_config(), step_log_dir=tmp_path)
    assert [r.method for r in table.records] == ["loc-astar-gt"] * 2 + ["random-walk"] * 2
    for tau_d in TAU_D:
        for tau_c in TAU_C:
            assert table.cell("loc-astar-gt", tau_d, tau_c).sr == 100.0
    logs = sorted((tmp_path / "loc-astar-gt").glob("*.jsonl"))
    assert [p.name for p in logs] == ["empty-room-000.jsonl", "empty-room-001.jsonl"]
    step_log = StepLog.load(logs[0])
    record = table.records[0]
    assert np.hypot(*(step_log.positions()[-1] - np.array(step_log.goal))) == pytest.approx(record.final_distance)
    # every method sees the same start/goal pairs
    assert [r.shortest for r in table.records[:2]] == [r.shortest for r in table.records[2:]]


def test_run_benchmark_is_worker_independent(empty_room, furnished_room):
    specs = [AgentSpec("loc-astar-gt", AgentKind.LOC_ASTAR)]
    serial = run_benchmark(specs, [empty_room, furnished_room], benchmark_config())
    parallel = run_benchmark(specs, [empty_room, furnished_room], dataclasses.replace(benchmark_config(), workers=2))
    assert serial.records == parallel.records
    assert serial.cells == parallel.cells


def test_benchmark_skips_small_scenes(empty_room):
    cells = walled_cells(12, 12)
    closet: Scene = make_scene(cells, cells, "closet")
    specs = [AgentSpec("loc-astar-gt", AgentKind.LOC_ASTAR)]
    table = run_benchmark(specs, [closet, empty_room], benchmark_config())
    assert [scene_id for scene_id, _ in table.skipped] == ["closet"]
    assert {r.scene_id for r in table.records} == {"empty-room"}
    with pytest.raises(MetricError, match="every benchmark scene was skipped"):
        run_benchmark(specs, [closet], benchmark_config())
    with pytest.raises(MetricError):
        run_benchmark(specs, [], benchmark_config())
    with pytest.raises(AgentSpecError, match="unique"):
        run_benchmark(specs * 2, [empty_room], benchmark_config())


def test_build_specs(tmp_path):
    specs = build_specs(["loc-astar-gt", "loc-astar-noisy", "random-walk"], tmp_path, BenchmarkConfig())
    assert [s.kind for s in specs] == [AgentKind.LOC_ASTAR, AgentKind.LOC_ASTAR, AgentKind.RANDOM_WALK]
    assert specs[1].localizer.pos_var == 0.3
    with pytest.raises(MetricError, match="unknown methods"):
        build_specs(["teleport"], tmp_path, BenchmarkConfig())
    with pytest.raises(CheckpointError):
        build_specs(["flodiff-loc-gt"], tmp_path, BenchmarkConfig())


def synthetic_scenes(density: float, count: int = 10, first_seed: int = 0):
    return [
        synth_scene(seed, SizeClass.MEDIUM, density, scene_id=f"bench-{seed:03d}")
        for seed in range(first_seed, first_seed + count)
    ]


@pytest.mark.slow
def test_loc_astar_baseline_on_synthetic_scenes():
    specs = [AgentSpec("loc-astar-gt", AgentKind.LOC_ASTAR)]
    config = RunConfig(seed=0, benchmark=BenchmarkConfig(pairs_per_scene=10))
    bare = run_benchmark(specs, synthetic_scenes(0.0), config)
    assert not bare.skipped and len(bare.records) == 100
    cell = bare.cell("loc-astar-gt", 0.30, None)
    assert cell.sr == 100.0
    assert cell.spl >= 95.0
    # the same layouts, now with furniture the floor plans do not show
    furnished = run_benchmark(specs, synthetic_scenes(0.15), config)
    assert np.mean([r.collisions for r in furnished.records]) > 0


@pytest.mark.slow
def test_localized_policy_outperforms_baselines(trained_policies):
    specs = [
        AgentSpec("flodiff-loc-gt", AgentKind.FLODIFF_LOC, GroundTruthLocalizer(), trained_policies.loc),
        AgentSpec("flodiff-loc-noisy", AgentKind.FLODIFF_LOC, NoisyLocalizer(0.3), trained_policies.loc),
        AgentSpec("flodiff-naive", AgentKind.FLODIFF_NAIVE, policy=trained_policies.naive),
        AgentSpec("random-walk", AgentKind.RANDOM_WALK),
    ]
    scenes = synthetic_scenes(0.15, count=6, first_seed=100)
    rates = {spec.name: [] for spec in specs}
    for seed in range(3):
        config = RunConfig(seed=seed, benchmark=BenchmarkConfig(pairs_per_scene=5, replan_budget=60))
        table = run_benchmark(specs, scenes, config)
        for name in rates:
            rates[name].append(table.cell(name, 0.30, 50).sr)
    mean = {name: np.mean(values) for name, values in rates.items()}
    assert mean["flodiff-loc-gt"] > mean["flodiff-naive"]
    assert mean["flodiff-loc-gt"] > mean["flodiff-loc-noisy"]
    assert mean["flodiff-loc-gt"] > mean["random-walk"]
