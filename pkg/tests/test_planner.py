import itertools
import json

import numpy as np
import pytest

from podnet import data, planner, training
from podnet.data import NormStats
from podnet.model import PodnetModel, rollout_dynamics
from podnet.planner import FunctionDynamics, PlannerConfig


def exhaustive(dyn, s0, goal, cfg):
    """Breadth-first oracle with the planner's stopping rule.

    Returns ``(options, distance)``: the best sequence at the first depth that
    contains a goal-reaching sequence, else the best over every depth.
    """
    s0 = np.asarray(s0, float)
    best = ((), float(np.linalg.norm(s0 - goal)))
    if best[1] <= cfg.goal_eps:
        return best
    for depth in range(1, cfg.max_depth + 1):
        scored = []
        for seq in itertools.product(range(dyn.K), repeat=depth):
            end = planner.replay(dyn, s0, seq, cfg.option_duration)[-1]
            scored.append((float(np.linalg.norm(end - goal)), seq))
        dist, seq = min(scored)
        if dist < best[1]:
            best = (seq, dist)
        if dist <= cfg.goal_eps:
            return seq, dist
    return best


def _plus_minus():
    return FunctionDynamics(lambda S, k: S + (1.0 if k == 0 else -1.0), 2)


def test_plus_minus_stub_example():
    cfg = PlannerConfig(max_depth=5, option_duration=1, goal_eps=0.25)
    p = planner.beam_search(_plus_minus(), np.zeros(1), np.array([3.0]), cfg)
    assert p.options == [0, 0, 0]
    assert p.feasible and p.terminal_distance == 0.0
    assert exhaustive(_plus_minus(), np.zeros(1), np.array([3.0]), cfg)[0] == (0, 0, 0)
    np.testing.assert_array_equal(p.predicted_states[:, 0], [0, 1, 2, 3])


def test_trivial_goal_gives_empty_plan():
    cfg = PlannerConfig(goal_eps=0.5)
    p = planner.beam_search(_plus_minus(), np.zeros(1), np.array([0.3]), cfg)
    assert p.options == [] and p.feasible
    assert p.predicted_states.shape == (1, 1)


def test_unreachable_goal():
    cfg = PlannerConfig(max_depth=4, option_duration=1, goal_eps=0.25)
    p = planner.beam_search(_plus_minus(), np.zeros(1), np.array([10.0]), cfg)
    assert not p.feasible and len(p.options) <= 4
    assert p.terminal_distance == pytest.approx(6.0)
    assert len(p.predicted_states) == len(p.options) * cfg.option_duration + 1


def test_tie_break_prefers_lower_option_index():
    dyn = FunctionDynamics(lambda S, k: S + np.array([[1.0, 0.0], [0.0, 1.0]])[k], 2)
    cfg = PlannerConfig(max_depth=2, option_duration=1, goal_eps=0.1)
    p = planner.beam_search(dyn, np.zeros(2), np.array([1.0, 1.0]), cfg)
    assert p.options == [0, 1]


def _nonlinear_instance(rng):
    K = int(rng.integers(2, 4))
    V = rng.normal(size=(K, 2))
    dyn = FunctionDynamics(lambda S, k, V=V: S + V[k] + 0.1 * np.sin(S), K)
    cfg = PlannerConfig(max_depth=int(rng.integers(1, 6)), option_duration=int(rng.integers(1, 3)),
                        goal_eps=0.25)
    return dyn, cfg, rng.normal(size=2) * 2, rng.normal(size=2) * 4


def test_full_width_beam_equals_exhaustive():
    rng = np.random.default_rng(0)
    for _ in range(60):
        dyn, cfg, s0, goal = _nonlinear_instance(rng)
        cfg.beam_width = dyn.K ** cfg.max_depth
        p = planner.beam_search(dyn, s0, goal, cfg)
        seq, dist = exhaustive(dyn, s0, goal, cfg)
        assert p.terminal_distance == pytest.approx(dist, abs=1e-12)
        assert tuple(p.options) == seq


def test_default_width_matches_exhaustive_on_translation_stubs():
    rng = np.random.default_rng(1)
    for _ in range(60):
        K, d = int(rng.integers(2, 4)), int(rng.integers(1, 3))
        V = rng.integers(-2, 3, size=(K, d)).astype(float)
        dyn = FunctionDynamics(lambda S, k, V=V: S + V[k], K)
        cfg = PlannerConfig(max_depth=int(rng.integers(1, 6)),
                            option_duration=int(rng.integers(1, 3)), goal_eps=0.25)
        s0, goal = rng.normal(size=d) * 2, rng.normal(size=d) * 4
        p = planner.beam_search(dyn, s0, goal, cfg)
        assert p.terminal_distance == pytest.approx(exhaustive(dyn, s0, goal, cfg)[1], abs=1e-12)


def test_plan_invariants_and_determinism():
    rng = np.random.default_rng(2)
    for _ in range(20):
        dyn, cfg, s0, goal = _nonlinear_instance(rng)
        p = planner.beam_search(dyn, s0, goal, cfg)
        q = planner.beam_search(dyn, s0, goal, cfg)
        assert p.options == q.options
        np.testing.assert_array_equal(p.predicted_states, q.predicted_states)
        assert len(p.predicted_states) == len(p.options) * cfg.option_duration + 1
        assert not p.feasible or p.terminal_distance <= cfg.goal_eps


def test_invalid_config():
    with pytest.raises(ValueError):
        PlannerConfig(beam_width=0)
    with pytest.raises(ValueError):
        PlannerConfig(goal_eps=0.0)


# -- with a real model ------------------------------------------------------


def _checkpoint(seed=0, K=3):
    norm = NormStats(np.array([5.0, 5.0]), np.array([2.0, 2.0]))
    model = PodnetModel.init(K, 2, 2, np.random.default_rng(seed), hidden=8, mlp_hidden=(16,),
                             norm=norm)
    cfg = training.TrainConfig(K=K, stride=5, hidden=8, mlp_hidden=(16,))
    return training.Checkpoint(cfg, model, {})


def test_predicted_states_reproducible_by_rollout():
    ckpt = _checkpoint()
    cfg = PlannerConfig(max_depth=3, option_duration=2, beam_width=4, goal_eps=0.01)
    p = planner.plan(ckpt, np.array([2.0, 3.0]), np.array([8.0, 7.0]), cfg)
    per_step = [k for k in p.options for _ in range(cfg.option_duration)]
    ref = rollout_dynamics(ckpt.model, p.predicted_states[0], per_step, len(per_step))
    np.testing.assert_array_equal(p.predicted_states, ref)
    np.testing.assert_allclose(p.predicted_states[0], ckpt.norm.normalize_states([2.0, 3.0]))


def test_plan_dimension_mismatch():
    with pytest.raises(ValueError):
        planner.plan(_checkpoint(), np.zeros(3), np.zeros(2), PlannerConfig())


def test_execute_trivial_goal_and_trace_invariants():
    ckpt = _checkpoint()
    spec = data.make_env("waypoint2d", seed=0)
    cfg = PlannerConfig(max_depth=2, option_duration=1, beam_width=3, max_exec_steps=40)
    trace = planner.execute(ckpt, spec, np.array([5.0, 5.0]), np.array([5.1, 5.0]), cfg)
    assert trace.reached and trace.actions == [] and len(trace.states) == 1
    trace = planner.execute(ckpt, spec, np.array([1.0, 1.0]), np.array([9.0, 9.0]), cfg)
    assert len(trace.actions) == len(trace.states) - 1 == len(trace.options)
    assert len(trace.actions) <= cfg.max_exec_steps
    assert len(trace.plans) <= cfg.max_replans + 1
    doc = json.loads(json.dumps(trace.to_dict()))
    assert len(doc["states"]) == len(trace.states)
    lines = trace.to_csv().splitlines()
    assert lines[0] == "step,s0,s1,a0,a1,option" and len(lines) == len(trace.states) + 1


def test_execute_with_oracle_policy_reaches_goal():
    """A hand-built checkpoint whose policy and dynamics steer straight to fixed targets."""
    targets = np.array([[2.0, 2.0], [8.0, 2.0], [5.0, 8.0]])
    ckpt = _checkpoint()
    norm = ckpt.norm
    spec = data.make_env("waypoint2d", seed=0, waypoints=targets.tolist(), noise_std=0.0)

    class Oracle:
        K = 3

        def batch(self, S, k):
            raw = norm.denormalize_states(S)
            step = np.clip(targets[k] - raw, -1.0, 1.0)  # 5 raw steps of 0.2
            return norm.normalize_states(raw + step)

        def single(self, s, k):
            return self.batch(np.asarray(s)[None], k)[0]

    cfg = PlannerConfig(max_depth=4, option_duration=5, goal_eps=0.1)
    p = planner.beam_search(Oracle(), norm.normalize_states([5.0, 5.0]),
                            norm.normalize_states(targets[2]), cfg)
    assert p.feasible and p.options[0] == 2
