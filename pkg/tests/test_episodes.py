import dataclasses

import numpy as np
import pytest

from flonav.cache import planning_grid
from flonav.config import GeneratorConfig, RunConfig, SimConfig
from flonav.episodes import (
    DatasetError,
    DatasetFormatError,
    Episode,
    SamplingError,
    compute_stats,
    dataset_paths,
    episodes_per_scene,
    generate_dataset,
    load_dataset,
    sample_episode,
    save_dataset,
    verify_dataset,
)
from flonav.floorgrid import SizeClass, WorldPoint, synth_scene, world_to_pixel
from flonav.planner import path_length, path_to_actions, plan_trajectory

from .conftest import make_scene, walled_cells

CFG = SimConfig()


def test_sample_episode(synthetic_scene):
    episode = sample_episode(synthetic_scene, 17, CFG)
    assert episode.scene_id == "synthetic"
    assert episode.straight_line_distance >= 3.0
    assert len(episode.actions) == len(episode.trajectory) - 1
    assert episode.trajectory.start == episode.start
    assert tuple(episode.trajectory.positions[-1]) == pytest.approx(tuple(episode.goal))
    assert episode.shortest_length == pytest.approx(path_length(episode.trajectory))
    grid = planning_grid(synthetic_scene.truth_map, CFG.planning_radius(synthetic_scene.resolution))
    assert all(grid.is_free(world_to_pixel(tuple(p), grid)) for p in episode.trajectory.positions)
    assert sample_episode(synthetic_scene, 17, CFG) == episode
    assert sample_episode(synthetic_scene, 18, CFG) != episode


def test_demonstrations_replay_cleanly(synthetic_scene):
    episodes = [sample_episode(synthetic_scene, seed, CFG) for seed in range(10)]
    reports = verify_dataset(episodes, {synthetic_scene.scene_id: synthetic_scene}, CFG)
    assert all(report.ok for report in reports)
    assert all(report.collisions == 0 for report in reports)
    assert max(report.terminal_error for report in reports) <= 1e-9


def test_replay_detects_furniture(furnished_room, empty_room):
    # planned in the empty room, replayed where a table stands across the path
    grid = planning_grid(empty_room.truth_map, CFG.planning_radius(empty_room.resolution))
    trajectory = plan_trajectory(grid, (10, 20), (50, 20))
    episode = Episode(
        furnished_room.scene_id,
        trajectory.start,
        WorldPoint(*trajectory.positions[-1]),
        trajectory,
        tuple(path_to_actions(trajectory)),
        path_length(trajectory),
    )
    (report,) = verify_dataset([episode], {furnished_room.scene_id: furnished_room}, CFG)
    assert not report.ok
    assert report.collisions > 0
    with pytest.raises(DatasetError, match="unknown scene"):
        verify_dataset([episode], {}, CFG)


def test_sampling_errors(empty_room):
    cells = walled_cells(12, 12)
    closet = make_scene(cells, cells, "closet")
    with pytest.raises(SamplingError, match="apart"):
        sample_episode(closet, 0, CFG)
    with pytest.raises(SamplingError, match="fewer than two"):
        sample_episode(make_scene(walled_cells(8, 8), walled_cells(8, 8), "box"), 0, CFG)
    with pytest.raises(SamplingError, match="attempts"):
        sample_episode(empty_room, 0, CFG, min_distance=5.6, max_attempts=3)


def test_episodes_per_scene():
    assert episodes_per_scene(SizeClass.SMALL) == 15
    assert episodes_per_scene("medium") == 18
    assert episodes_per_scene(SizeClass.LARGE, 1) == 200
    assert episodes_per_scene(SizeClass.SMALL, 1000) == 1
    with pytest.raises(DatasetError, match="scale factor"):
        episodes_per_scene(SizeClass.SMALL, 0)


def test_dataset_round_trip(tmp_path, synthetic_scene):
    episodes = [sample_episode(synthetic_scene, seed, CFG) for seed in range(3)]
    path = tmp_path / "episodes.jsonl"
    save_dataset(episodes, path)
    assert load_dataset(path) == episodes
    assert len(path.read_text().splitlines()) == 3


def test_malformed_dataset(tmp_path, synthetic_scene):
    path = tmp_path / "episodes.jsonl"
    save_dataset([sample_episode(synthetic_scene, seed, CFG) for seed in range(3)], path)
    lines = path.read_text().splitlines()
    lines[1] = lines[1].replace('"actions": [[', '"actions": [[9.0, 9.0], [')
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetFormatError, match=r"episodes.jsonl:2: malformed episode record"):
        load_dataset(path)
    path.write_text(lines[0] + "\n{\n")
    with pytest.raises(DatasetFormatError, match=r"episodes.jsonl:2"):
        load_dataset(path)
    with pytest.raises(DatasetFormatError, match="does not exist"):
        load_dataset(tmp_path / "absent.jsonl")


def test_stats(synthetic_scene):
    episodes = [sample_episode(synthetic_scene, seed, CFG) for seed in range(5)]
    stats = compute_stats(episodes)
    assert stats.count == 5
    assert stats.straight_line.min >= 3.0
    assert stats.travel.min >= stats.straight_line.min - 1e-9
    assert stats.straight_line.min <= stats.straight_line.median <= stats.straight_line.max
    table = stats.format_table()
    assert table.splitlines()[0] == "episodes: 5"
    assert "travel distance (m)" in table
    with pytest.raises(DatasetError):
        compute_stats([])


def test_generate_dataset_is_worker_independent(synthetic_scene, empty_room):
    config = RunConfig(seed=2, generator=GeneratorConfig(scale_factor=50, min_pair_distance=2.0))
    serial = generate_dataset([synthetic_scene, empty_room], config)
    assert len(serial) == 2 * 3
    assert [e.scene_id for e in serial] == ["synthetic"] * 3 + ["empty-room"] * 3
    parallel = generate_dataset([synthetic_scene, empty_room], dataclasses.replace(config, workers=2))
    assert serial == parallel
    assert np.array_equal(serial[0].trajectory.positions, parallel[0].trajectory.positions)


def test_dataset_paths(tmp_path):
    assert dataset_paths(tmp_path, "train") == (
        tmp_path / "datasets" / "train.jsonl",
        tmp_path / "datasets" / "train.stats.txt",
    )


@pytest.mark.slow
def test_generated_dataset_replays_cleanly():
    scenes = [synth_scene(seed, SizeClass.MEDIUM, 0.15, scene_id=f"replay-{seed}") for seed in range(10)]
    config = RunConfig(seed=0, generator=GeneratorConfig(scale_factor=9))
    episodes = generate_dataset(scenes, config)
    assert len(episodes) == 200
    reports = verify_dataset(episodes, {scene.scene_id: scene for scene in scenes}, config.sim)
    assert all(report.collisions == 0 for report in reports)
    # within one cell of the goal
    assert max(report.terminal_error for report in reports) <= config.generator.resolution
    assert all(report.ok for report in reports)
