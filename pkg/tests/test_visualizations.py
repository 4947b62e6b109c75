import numpy as np
import pytest

from flonav.agents import AgentKind, AgentSpec, StepLog, run_logged_episode
from flonav.config import RunConfig
from flonav.planner import Pose
from flonav.visualizations import FURNITURE, GOAL, PALETTE, START, RenderError, render_trajectory, save_render
from PIL import Image


def colors(image: Image.Image) -> set:
    return {tuple(c) for c in np.asarray(image).reshape(-1, 3)}


def test_background(furnished_room):
    image = render_trajectory(furnished_room, scale=2)
    assert image.size == (120, 80)
    pixels = np.asarray(image)
    # image row 0 is the northern wall, the table sits in grid rows 8..23
    assert tuple(pixels[0, 0]) == (0, 0, 0)
    assert tuple(pixels[79 - 2 * 10, 2 * 30]) == FURNITURE
    assert tuple(pixels[79 - 2 * 30, 2 * 30]) == (255, 255, 255)


def test_render_step_log(empty_room):
    spec = AgentSpec("loc-astar-gt", AgentKind.LOC_ASTAR)
    _, step_log = run_logged_episode(spec, empty_room, Pose(1.0, 1.0, 0.0), (5.0, 3.0), RunConfig(), seed=0)
    image = render_trajectory(empty_room, [step_log])
    assert image.size == (240, 160)
    found = colors(image)
    assert PALETTE[0] in found
    assert GOAL in found
    assert START in found
    # rendering is a pure function of its inputs
    again = render_trajectory(empty_room, [step_log])
    assert again.tobytes() == image.tobytes()


def test_explicit_markers(empty_room):
    image = render_trajectory(empty_room, goals=[(3.0, 2.0)], start=Pose(1.0, 1.0, 1.0))
    pixels = np.asarray(image)
    assert tuple(pixels[160 - 2 * 4 * 10, 3 * 4 * 10]) == GOAL
    assert START in colors(image)
    assert PALETTE[0] not in colors(image)


def test_render_errors(empty_room, furnished_room):
    foreign = StepLog("m", furnished_room.scene_id, 0, Pose(1.0, 1.0, 0.0), (5.0, 3.0))
    with pytest.raises(RenderError):
        render_trajectory(empty_room, [foreign])
    with pytest.raises(RenderError):
        render_trajectory(empty_room, scale=0)


def test_save_render(tmp_path, empty_room):
    path = tmp_path / "renders" / "empty.png"
    save_render(render_trajectory(empty_room, scale=1), path)
    with Image.open(path) as image:
        assert image.size == (60, 40) and image.mode == "RGB"
