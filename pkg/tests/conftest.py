import sys
import pytest
import numpy as np
import flonav

from typing import List, NamedTuple

from flonav.config import GeneratorConfig, PolicyConfig, RunConfig, SimConfig, TrainConfig
from flonav.episodes import Episode, generate_dataset
from flonav.floorgrid import CellState, GridMap, Scene, SizeClass, synth_scene
from flonav.policy import FloDiffPolicy, train


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run the trained-model checks")


def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "slow: trains a policy or runs a multi-scene benchmark; skipped unless --runslow is given",
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def run_flonav(cmd: List[str]) -> int:
    tmp = sys.argv
    setattr(sys, "argv", ["flonav", *cmd])
    try:
        return flonav.main()
    finally:
        setattr(sys, "argv", tmp)


def walled_cells(width: int, height: int, wall: int = 2) -> np.ndarray:
    cells = np.full((height, width), CellState.FREE, dtype=np.uint8)
    cells[:wall, :] = CellState.OCCUPIED
    cells[-wall:, :] = CellState.OCCUPIED
    cells[:, :wall] = CellState.OCCUPIED
    cells[:, -wall:] = CellState.OCCUPIED
    return cells


def make_scene(plan: np.ndarray, truth: np.ndarray, scene_id: str, resolution: float = 0.1) -> Scene:
    return Scene(
        GridMap(plan, resolution, (0.0, 0.0), scene_id),
        GridMap(truth, resolution, (0.0, 0.0), scene_id),
        SizeClass.SMALL,
        scene_id,
    )


@pytest.fixture
def empty_room() -> Scene:
    """A 6 m x 4 m walled room with no furniture."""
    cells = walled_cells(60, 40)
    return make_scene(cells, cells, "empty-room")


@pytest.fixture
def furnished_room() -> Scene:
    """The empty room with a 0.8 m x 1.6 m table that the floor plan does not show; it leaves a passage to the north."""
    plan = walled_cells(60, 40)
    truth = plan.copy()
    truth[8:24, 26:34] = CellState.OCCUPIED
    return make_scene(plan, truth, "furnished-room")


@pytest.fixture(scope="session")
def synthetic_scene() -> Scene:
    return synth_scene(7, SizeClass.SMALL, 0.15, scene_id="synthetic")


@pytest.fixture(scope="session")
def furniture_free_scene() -> Scene:
    return synth_scene(7, SizeClass.MEDIUM, 0.0, scene_id="bare")


TINY_POLICY = PolicyConfig(
    context_length=1,
    plan_size=4,
    context_dim=8,
    n_layers=1,
    n_heads=2,
    feedforward_dim=8,
    encoder_hidden=8,
    head_hidden=8,
    horizon=4,
    action_horizon=2,
    diffusion_steps=4,
    trunk_hidden=8,
    trunk_blocks=1,
    step_embed_dim=4,
)
TINY_SIM = SimConfig(num_rays=5)


@pytest.fixture
def tiny_config() -> RunConfig:
    return RunConfig(
        seed=3,
        sim=TINY_SIM,
        policy=TINY_POLICY,
        train=TrainConfig(epochs=1, batch_size=8, segments_per_episode=2),
    )


class TrainedPolicies(NamedTuple):
    loc: FloDiffPolicy
    naive: FloDiffPolicy
    scenes: List[Scene]
    episodes: List[Episode]


@pytest.fixture(scope="session")
def trained_policies() -> TrainedPolicies:
    """Both policy variants trained on 20 furnished scenes with 20 demonstrations each; only slow checks use it."""
    scenes = [synth_scene(i, SizeClass.MEDIUM, 0.15, scene_id=f"train-{i:02d}") for i in range(20)]
    config = RunConfig(
        seed=0,
        generator=GeneratorConfig(scale_factor=9),
        train=TrainConfig(epochs=30, lr=1e-3),
    )
    episodes = generate_dataset(scenes, config)
    by_id = {scene.scene_id: scene for scene in scenes}
    loc = train(episodes, by_id, config).policy
    naive = train(episodes, by_id, config.with_overrides({("train", "variant"): "naive"})).policy
    return TrainedPolicies(loc, naive, scenes, episodes)
