import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vlaflow.env import (DemoDataset, ExpertChunkPolicy, evaluate, expert_action, generate_demos, load_demos,
                         observe, random_policy, render, reset, save_demos, step, transition)
from vlaflow.env.demos import chunk_actions, collect_episodes, sidecar_path
from vlaflow.env.render import AGENT_COLOR, BACKGROUND, OUTSIDE
from vlaflow.env.tasks import MIN_SEPARATION, PLACEMENT, STEP_SIZE, TASKS, is_success
from vlaflow.env.vocab import COLOR_NAMES, PALETTE, TOKEN, WORDS, decode, instruction
from vlaflow.errors import EpisodeDoneError
from vlaflow.normalize import NormStats, compute_norm_stats


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(TASKS), st.integers(0, 2**62))
def test_reset_layout_invariants(task, seed):
    state, obs, instr = reset(task, seed)
    pts = [state.agent] + [o[:2] for o in state.objects] + ([state.zone] if state.zone else [])
    pts = np.array(pts)
    assert pts.min() >= PLACEMENT[0] and pts.max() <= PLACEMENT[1]
    d = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    assert d[np.triu_indices(len(pts), 1)].min() >= MIN_SEPARATION
    assert len({o[2] for o in state.objects}) == len(state.objects)
    assert obs.shape == (2, 32, 32, 3) and obs.dtype == np.float32
    assert 0.0 <= obs.min() and obs.max() <= 1.0
    assert COLOR_NAMES[state.goal_color] in decode(instr)
    assert int((instr == TOKEN["<img>"]).sum()) == 2


def test_reset_deterministic_and_seed_sensitive():
    a, oa, _ = reset("push", 3)
    b, ob, _ = reset("push", 3)
    c, _, _ = reset("push", 4)
    assert a == b and np.array_equal(oa, ob) and a != c


def test_reset_rejects_unknown_task():
    with pytest.raises(ValueError):
        reset("stack", 0)


def test_step_moves_by_step_size_and_clips_action():
    s, _, _ = reset("reach", 0)
    n, _, _, _ = step(s, [3.0, 0.0, 0.0])
    assert n.agent[0] == pytest.approx(s.agent[0] + STEP_SIZE)
    assert n.agent[1] == pytest.approx(s.agent[1]) and n.t == 1


def test_agent_stays_in_workspace():
    s, _, _ = reset("reach", 0)
    for _ in range(40):
        s = transition(s, [-1.0, -1.0, 0.0])
    assert s.agent == (0.0, 0.0)


def test_gripper_rate_control():
    s, _, _ = reset("pickplace", 0)
    s = transition(s, [0, 0, 0.4])
    assert s.gripper == pytest.approx(0.4)
    s = transition(s, [0, 0, 1.0])
    assert s.gripper == 1.0
    s = transition(s, [0, 0, -0.3])
    assert s.gripper == pytest.approx(0.7)


def _at(state, pos):
    return dataclasses.replace(state, agent=tuple(float(v) for v in pos))


def test_pickplace_grasp_carry_release():
    s, _, _ = reset("pickplace", 1)
    s = _at(s, s.object_xy(0) + [0.01, 0.0])
    s = transition(s, [0, 0, 1.0])
    assert s.held == 0
    before = s.object_xy(0)
    s = transition(s, [1.0, 0, 0])
    np.testing.assert_allclose(s.object_xy(0), before + [STEP_SIZE, 0], atol=1e-12)
    s = transition(s, [0, 0, -1.0])
    assert s.held == -1
    after = s.object_xy(0)
    s = transition(s, [1.0, 0, 0])
    np.testing.assert_allclose(s.object_xy(0), after)


def test_pickplace_closed_gripper_far_from_objects_grabs_nothing():
    s, _, _ = reset("pickplace", 2)
    s = transition(s, [0, 0, 1.0])
    assert s.held == -1


def test_push_drags_object_in_contact():
    s, _, _ = reset("push", 2)
    s = _at(s, s.object_xy(0) + [-0.02, 0.0])
    before = s.object_xy(0)
    s = transition(s, [1.0, 0, 0])
    np.testing.assert_allclose(s.object_xy(0), before + [STEP_SIZE, 0], atol=1e-12)


def test_success_requires_release_in_pickplace():
    s, _, _ = reset("pickplace", 3)
    objs = list(s.objects)
    objs[0] = (s.zone[0], s.zone[1], objs[0][2])
    s = dataclasses.replace(s, objects=tuple(objs), held=0)
    assert not is_success(s)
    assert is_success(dataclasses.replace(s, held=-1))


def test_episode_ends_at_horizon_and_refuses_further_steps():
    s, _, _ = reset("reach", 0, horizon=3)
    done = False
    for _ in range(3):
        s, _, done, _ = step(s, [0, 0, 0])
    assert done and s.t == 3
    with pytest.raises(EpisodeDoneError):
        step(s, [0, 0, 0])


def test_render_agent_objects_and_crop():
    s, _, _ = reset("reach", 5)
    g = render(s, 0)
    col, row = (np.array(s.agent) * 32).astype(int)
    np.testing.assert_allclose(g[row, col], AGENT_COLOR, atol=1e-6)
    ox, oy = (s.object_xy(0) * 32).astype(int)
    np.testing.assert_allclose(g[oy, ox], PALETTE[s.objects[0][2]], atol=1e-6)
    crop = render(_at(s, (0.05, 0.05)), 1)
    np.testing.assert_array_equal(crop[0, 0], OUTSIDE)
    np.testing.assert_allclose(crop[16, 16], AGENT_COLOR, atol=1e-6)


def test_render_empty_scene_is_background():
    s, _, _ = reset("reach", 0)
    empty = dataclasses.replace(s, objects=(), agent=None)
    np.testing.assert_allclose(render(empty, 0), np.broadcast_to(BACKGROUND, (32, 32, 3)))


def test_observation_changes_only_through_state():
    s, o1, _ = reset("push", 8)
    assert np.array_equal(observe(s), o1)


def test_vocabulary_and_templates():
    assert WORDS[0] == "<pad>" and WORDS[1] == "<img>"
    assert len(WORDS) <= 64
    assert decode(instruction("reach", 2)) == "<img> <img> <bos> reach the blue object"


@pytest.mark.parametrize("task", TASKS)
def test_expert_succeeds(task):
    res = evaluate(ExpertChunkPolicy(8), task, 40, 0)
    assert res.success_rate == 1.0


def test_random_policy_rarely_succeeds_on_reach():
    assert evaluate(random_policy(), "reach", 100, 0).success_rate < 0.1


def test_evaluate_deterministic_and_logs_episodes():
    a = evaluate(random_policy(), "push", 5, 3)
    b = evaluate(random_policy(), "push", 5, 3)
    assert a.to_dict() == b.to_dict()
    assert [e["trial"] for e in a.episodes] == list(range(5))


def test_expert_action_bounded():
    for task in TASKS:
        s, _, _ = reset(task, 4)
        while not s.done:
            a = expert_action(s)
            assert a.shape == (3,) and np.abs(a).max() <= 1.0 + 1e-12
            s = transition(s, a)


def test_chunk_actions_pads_with_last_action():
    acts = np.arange(6, dtype=np.float64).reshape(3, 2)
    ch = chunk_actions(acts, 4)
    assert ch.shape == (3, 4, 2)
    np.testing.assert_array_equal(ch[0], [[0, 1], [2, 3], [4, 5], [4, 5]])
    np.testing.assert_array_equal(ch[2], [[4, 5]] * 4)


def test_generate_demos_shapes(reach_demos):
    ds = reach_demos
    assert isinstance(ds, DemoDataset) and ds.n_episodes == 6
    m = len(ds)
    assert ds.images.shape == (m, 2, 32, 32, 3) and ds.actions.shape == (m, 8, 3)
    assert ds.states.shape == (m, 4) and ds.instructions.shape[0] == m
    assert ds.t[0] == 0 and set(ds.episode.tolist()) == set(range(6))


def test_demos_deterministic_per_seed():
    a, b = generate_demos("push", 2, 5), generate_demos("push", 2, 5)
    assert np.array_equal(a.actions, b.actions) and np.array_equal(a.images, b.images)


def test_demo_file_roundtrip(tmp_path, reach_demos):
    path = tmp_path / "d.jsonl"
    ds = generate_demos("pickplace", 2, 7, path=path)
    back = load_demos(path)
    assert sidecar_path(path).exists()
    for f in ("images", "instructions", "states", "actions", "episode", "t"):
        a, b = getattr(ds, f), getattr(back, f)
        assert a.dtype == b.dtype and np.array_equal(a, b), f
    assert back.task == "pickplace" and back.n_episodes == 2
    header = json.loads(path.read_text().splitlines()[0])
    assert header["format"] == "vlaflow-demos"
    path2 = tmp_path / "e.jsonl"
    save_demos(back, path2)
    assert np.array_equal(load_demos(path2).actions, ds.actions)


def test_demo_file_bytes_deterministic(tmp_path):
    a, b = tmp_path / "a" / "d.jsonl", tmp_path / "b" / "d.jsonl"
    for p in (a, b):
        p.parent.mkdir()
        generate_demos("reach", 2, 1, path=p)
    assert a.read_bytes() == b.read_bytes()
    assert sidecar_path(a).read_bytes() == sidecar_path(b).read_bytes()


def test_collect_rejects_nonpositive_n():
    with pytest.raises(ValueError):
        collect_episodes("reach", 0, 0)


def test_norm_stats(reach_demos):
    ns = compute_norm_stats(reach_demos)
    a = ns.normalize_actions(reach_demos.actions[:, 0])
    np.testing.assert_allclose(a.mean(0), 0, atol=1e-5)
    back = ns.denormalize_actions(ns.normalize_actions(reach_demos.actions))
    np.testing.assert_allclose(back, reach_demos.actions, atol=1e-5)
    ns2 = NormStats.from_dict(json.loads(json.dumps(ns.to_dict())))
    np.testing.assert_array_equal(ns2.normalize_states(reach_demos.states), ns.normalize_states(reach_demos.states))
