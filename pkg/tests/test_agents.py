import dataclasses
import math

import numpy as np
import pytest

from flonav.agents import (
    AgentKind,
    AgentSpec,
    AgentSpecError,
    EvalRecord,
    InfeasibleEpisodeError,
    StepLog,
    StepLogError,
    contact_point,
    diagnose_pose_noise,
    loc_astar_plan,
    mark_contacts,
    random_walk_chunk,
    run_episode,
    run_logged_episode,
    shortest_length,
    snap_to_free,
    step_log_path,
)
from flonav.config import BenchmarkConfig, RunConfig
from flonav.cache import planning_grid
from flonav.planner import Action, Pose
from flonav.policy import ActionNormalizer, FloDiffPolicy, Variant, build_model
from flonav.simulator import NoisyLocalizer, OrientationMode, wrap_angle

from .conftest import TINY_POLICY, TINY_SIM

LOC_ASTAR = AgentSpec("loc-astar-gt", AgentKind.LOC_ASTAR)


def short_budget(config: RunConfig, budget: int) -> RunConfig:
    return dataclasses.replace(config, benchmark=BenchmarkConfig(replan_budget=budget))


def tiny_policy(variant: Variant) -> FloDiffPolicy:
    return FloDiffPolicy(build_model(TINY_POLICY, TINY_SIM.num_rays, seed=0), variant, TINY_SIM, ActionNormalizer(0.1))


def test_loc_astar_reaches_goal_in_empty_room(empty_room):
    record = run_episode(LOC_ASTAR, empty_room, Pose(1.0, 1.0, 0.0), (5.0, 3.0), RunConfig(), seed=0)
    # the last chunk of the plan runs to its end, which is the goal itself
    assert record.final_distance == pytest.approx(0.0, abs=1e-9)
    assert record.collisions == 0
    for tau_d in (0.25, 0.30, 0.35):
        assert record.succeeded(tau_d, 0)
    assert record.traveled == pytest.approx(record.shortest, rel=0.05)
    assert record.traveled >= math.hypot(4.0, 2.0) - 1e-9


def test_arrival_does_not_depend_on_stop_radius(empty_room):
    records = [
        run_episode(
            LOC_ASTAR, empty_room, Pose(1.0, 1.0, 0.0), (5.0, 3.0), RunConfig().with_overrides({("sim", "tau_d"): d}), 0
        )
        for d in (0.25, 0.30, 0.35)
    ]
    assert records[0].final_distance == records[1].final_distance == records[2].final_distance


def test_loc_astar_plans_around_unmapped_furniture(furnished_room):
    record, step_log = run_logged_episode(
        LOC_ASTAR, furnished_room, Pose(1.0, 2.0, 0.0), (5.0, 2.0), short_budget(RunConfig(), 60), seed=0
    )
    assert record.collisions > 0
    assert record.succeeded(0.3, None)
    assert record.replans < 60
    entries = step_log.entries
    assert entries[0].replan
    collided = [i for i, entry in enumerate(entries) if entry.collided]
    assert collided
    for i in collided:
        # a collided step ends the chunk: the agent rotates in place and replans
        replan = entries[i + 1]
        assert replan.replan
        assert (replan.x, replan.y) == (entries[i].x, entries[i].y)
        assert replan.theta == pytest.approx(wrap_angle(entries[i].theta - math.pi / 4))
        # and the next chunk does not push into the obstacle it just hit
        if i + 2 < len(entries) and entries[i + 2].action is not None:
            blocked, retry = entries[i].action, entries[i + 2].action
            assert (blocked.dx, blocked.dy) != pytest.approx((retry.dx, retry.dy))


def test_mark_contacts(empty_room):
    cfg = RunConfig().sim
    assert mark_contacts(empty_room.floor_plan, [], cfg.agent_radius) is empty_room.floor_plan
    marked = mark_contacts(empty_room.floor_plan, [(2.65, 2.05)], cfg.agent_radius)
    added = marked.blocked_mask & ~empty_room.floor_plan.blocked_mask
    # cell centers within 0.18 m of a cell center on a 0.1 m grid
    assert added.sum() == 9
    assert added[20, 26]
    assert marked.scene_id == empty_room.floor_plan.scene_id


def test_contact_point():
    point = contact_point(Pose(2.42, 2.05, 0.0), Action(0.1, 0.0), RunConfig().sim, 0.1)
    assert point == pytest.approx((2.65, 2.05))
    point = contact_point(Pose(1.0, 1.0, 0.0), Action(0.0, -0.3), RunConfig().sim, 0.1)
    assert point == pytest.approx((1.0, 0.77))


def test_loc_astar_plan_avoids_contacts(empty_room):
    cfg = RunConfig().sim
    estimate = Pose(2.42, 2.05, 0.0)
    contact = (2.65, 2.05)
    actions = loc_astar_plan(empty_room.floor_plan, estimate, (5.05, 2.05), cfg, contacts=[contact])
    assert actions is not None
    positions = estimate.position + np.cumsum(np.array(actions), axis=0)
    assert tuple(positions[-1]) == pytest.approx((5.05, 2.05))
    clearance = np.hypot(positions[:, 0] - contact[0], positions[:, 1] - contact[1])
    assert clearance.min() > cfg.planning_radius(0.1) + 0.05
    # without the contact the plan runs straight through it
    straight = loc_astar_plan(empty_room.floor_plan, estimate, (5.05, 2.05), cfg)
    assert straight is not None
    assert all(a.dy == pytest.approx(0.0) for a in straight)


def test_snap_to_free(empty_room):
    grid = planning_grid(empty_room.floor_plan, RunConfig().sim.planning_radius(0.1))
    assert snap_to_free(grid, (1.0, 1.0), 1.0) == (10, 10)
    # the estimate lies in the wall; the nearest free planning cell is 0.5 m away
    assert snap_to_free(grid, (0.05, 2.05), 1.0) == (5, 20)
    assert snap_to_free(grid, (0.05, 2.05), 0.2) is None
    assert snap_to_free(grid, (-3.0, 2.0), 1.0) is None


def test_loc_astar_plan(empty_room):
    cfg = RunConfig().sim
    actions = loc_astar_plan(empty_room.floor_plan, Pose(0.05, 2.05, 0.0), (3.05, 2.05), cfg)
    assert actions is not None
    assert actions[0].dx == pytest.approx(0.5) and actions[0].dy == pytest.approx(0.0)
    assert sum(a.dx for a in actions) == pytest.approx(3.0)
    assert all(a.dx != 0.0 or a.dy != 0.0 for a in actions)
    assert loc_astar_plan(empty_room.floor_plan, Pose(0.05, 2.05, 0.0), (3.05, 2.05), cfg, snap_radius=0.2) is None
    # a goal inside the inflated wall margin cannot be planned to
    assert loc_astar_plan(empty_room.floor_plan, Pose(1.0, 2.0, 0.0), (0.3, 2.0), cfg) is None


def test_unplannable_estimate_spends_budget(empty_room):
    spec = AgentSpec("loc-astar-noisy", AgentKind.LOC_ASTAR, NoisyLocalizer(100.0))
    record = run_episode(spec, empty_room, Pose(1.0, 1.0, 0.0), (5.0, 3.0), short_budget(RunConfig(), 3), seed=1)
    assert record.replans == 3


def test_shortest_length(empty_room):
    cfg = RunConfig().sim
    assert shortest_length(empty_room, (1.0, 2.0), (5.0, 2.0), cfg) == pytest.approx(4.0, abs=0.05)
    with pytest.raises(InfeasibleEpisodeError):
        shortest_length(empty_room, (0.3, 2.0), (5.0, 2.0), cfg)


def test_infeasible_endpoints(empty_room):
    with pytest.raises(InfeasibleEpisodeError, match="in collision"):
        run_episode(LOC_ASTAR, empty_room, Pose(0.1, 2.0, 0.0), (5.0, 2.0), RunConfig(), seed=0)
    with pytest.raises(InfeasibleEpisodeError, match="not free"):
        run_episode(LOC_ASTAR, empty_room, Pose(1.0, 2.0, 0.0), (5.95, 2.0), RunConfig(), seed=0)


def test_random_walk_terminates(empty_room):
    spec = AgentSpec("random-walk", AgentKind.RANDOM_WALK)
    config = short_budget(RunConfig(), 4)
    record = run_episode(spec, empty_room, Pose(3.0, 2.0, 0.0), (5.0, 3.0), config, seed=5)
    assert record.replans == 4
    assert record.steps <= 4 * config.policy.action_horizon
    assert record.traveled <= record.steps * 0.1 + 1e-9
    assert record == run_episode(spec, empty_room, Pose(3.0, 2.0, 0.0), (5.0, 3.0), config, seed=5)
    assert record != run_episode(spec, empty_room, Pose(3.0, 2.0, 0.0), (5.0, 3.0), config, seed=6)


def test_random_walk_chunk():
    rng = np.random.default_rng(0)
    chunk = random_walk_chunk(rng, 16)
    assert len(chunk) == 16
    assert all(a.norm == pytest.approx(0.1) for a in chunk)


def test_episodes_are_deterministic(furnished_room):
    spec = AgentSpec("loc-astar-noisy", AgentKind.LOC_ASTAR, NoisyLocalizer(0.3))
    config = short_budget(RunConfig(), 10)
    first = run_episode(spec, furnished_room, Pose(1.0, 1.0, 0.0), (5.0, 3.0), config, seed=3)
    assert first == run_episode(spec, furnished_room, Pose(1.0, 1.0, 0.0), (5.0, 3.0), config, seed=3)


@pytest.mark.parametrize("kind,variant", [(AgentKind.FLODIFF_LOC, Variant.LOC), (AgentKind.FLODIFF_NAIVE, Variant.NAIVE)])
def test_diffusion_agents_run(empty_room, tiny_config, kind, variant):
    spec = AgentSpec(kind.value, kind, policy=tiny_policy(variant))
    config = short_budget(tiny_config, 3)
    record, step_log = run_logged_episode(spec, empty_room, Pose(1.0, 1.0, 0.0), (5.0, 3.0), config, seed=0)
    assert record.replans <= 3
    assert record.steps <= 3 * TINY_POLICY.action_horizon
    replans = [entry for entry in step_log.entries if entry.replan]
    assert len(replans) == record.replans
    # every plan records the pose it was conditioned on
    assert all(entry.estimate is not None for entry in replans)
    again = run_episode(spec, empty_room, Pose(1.0, 1.0, 0.0), (5.0, 3.0), config, seed=0)
    assert again == record


def test_agent_spec_validation():
    with pytest.raises(AgentSpecError, match="needs a trained policy"):
        AgentSpec("flodiff-loc", AgentKind.FLODIFF_LOC)
    with pytest.raises(AgentSpecError, match="needs a loc policy"):
        AgentSpec("flodiff-loc", AgentKind.FLODIFF_LOC, policy=tiny_policy(Variant.NAIVE))
    assert AgentKind.LOC_ASTAR.uses_localizer and not AgentKind.LOC_ASTAR.uses_policy
    assert AgentKind.FLODIFF_NAIVE.uses_policy and not AgentKind.FLODIFF_NAIVE.uses_localizer


def test_diagnose_pose_noise(empty_room):
    policy = tiny_policy(Variant.LOC)
    pose = Pose(2.0, 2.0, 0.0)
    plans = diagnose_pose_noise(policy, empty_room, pose, (5.0, 3.0), 0.3, OrientationMode.UNIFORM, 3, seed=0)
    assert len(plans) == 3
    for plan in plans:
        assert plan.positions.shape == (TINY_POLICY.horizon + 1, 2)
        assert tuple(plan.positions[0]) == (2.0, 2.0)
    assert len({plan.estimate for plan in plans}) == 3
    with pytest.raises(AgentSpecError):
        diagnose_pose_noise(tiny_policy(Variant.NAIVE), empty_room, pose, (5.0, 3.0), 0.3, OrientationMode.KEEP, 1, 0)


def test_eval_record():
    record = EvalRecord("loc-astar-gt", "scene", 2, 0.28, 12, 7.5, 6.0, steps=80, replans=5)
    assert record.succeeded(0.3, None)
    assert record.succeeded(0.3, 50)
    assert not record.succeeded(0.3, 10)
    assert not record.succeeded(0.25, None)
    assert not record.succeeded(0.3, None, max_travel=5.0)
    assert EvalRecord.from_json(record.to_json()) == record
    with pytest.raises(ValueError):
        EvalRecord("m", "s", 0, 0.1, -1, 1.0, 1.0)


def test_step_log_files(tmp_path, empty_room):
    record, step_log = run_logged_episode(
        LOC_ASTAR, empty_room, Pose(1.0, 1.0, 0.0), (5.0, 3.0), RunConfig(), seed=0, pair_index=4
    )
    path = step_log_path(tmp_path, record)
    assert path == tmp_path / "loc-astar-gt" / "empty-room-004.jsonl"
    step_log.save(path)
    loaded = StepLog.load(path)
    assert loaded == step_log
    positions = loaded.positions()
    assert tuple(positions[0]) == (1.0, 1.0)
    assert np.hypot(*(positions[-1] - np.array([5.0, 3.0]))) <= 0.3
    lines = path.read_text().splitlines()
    lines[2] = '{"pose": [1.0, 1.0]}'
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(StepLogError, match=r"004.jsonl:3: malformed step log entry"):
        StepLog.load(path)
    path.write_text("")
    with pytest.raises(StepLogError, match="empty step log"):
        StepLog.load(path)
