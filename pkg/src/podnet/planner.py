"""Option-space planning through the learned option dynamics, and closed-loop execution."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import env_step
from .model import dynamics_predict, policy_action


@dataclass
class PlannerConfig:
    beam_width: int = 8
    max_depth: int = 12
    option_duration: int = 5
    goal_eps: float = 0.5
    max_exec_steps: int = 1000
    max_replans: int = 3

    def __post_init__(self):
        if self.beam_width < 1 or self.max_depth < 1 or self.option_duration < 1:
            raise ValueError("beam_width, max_depth and option_duration must be at least 1")
        if not self.goal_eps > 0:
            raise ValueError("goal_eps must be positive")
        if self.max_exec_steps < 0 or self.max_replans < 0:
            raise ValueError("max_exec_steps and max_replans must be non-negative")


@dataclass
class Plan:
    options: list
    predicted_states: np.ndarray
    feasible: bool
    terminal_distance: float

    def to_dict(self):
        return {"options": [int(k) for k in self.options],
                "predicted_states": np.asarray(self.predicted_states).tolist(),
                "feasible": bool(self.feasible),
                "terminal_distance": float(self.terminal_distance)}


@dataclass
class ExecutionTrace:
    states: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    options: list = field(default_factory=list)
    reached: bool = False
    plans: list = field(default_factory=list)

    def to_dict(self):
        return {"states": np.asarray(self.states).tolist(),
                "actions": np.asarray(self.actions).reshape(len(self.actions), -1).tolist(),
                "options": [int(k) for k in self.options],
                "reached": bool(self.reached),
                "plans": [p.to_dict() for p in self.plans]}

    def to_csv(self):
        states = np.asarray(self.states)
        d = states.shape[1]
        m = np.asarray(self.actions).shape[1] if self.actions else d
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", *[f"s{i}" for i in range(d)], *[f"a{i}" for i in range(m)], "option"])
        for t, s in enumerate(states):
            if t < len(self.actions):
                row = [*map(repr, map(float, self.actions[t])), self.options[t]]
            else:
                row = [""] * m + [""]
            w.writerow([t, *map(repr, map(float, s)), *row])
        return buf.getvalue()


class FunctionDynamics:
    """Wrap ``fn(states (N, d), option) -> (N, d)`` for the planner."""

    def __init__(self, fn, K):
        self.fn, self.K = fn, K

    def batch(self, states, k):
        return np.asarray(self.fn(states, k), dtype=np.float64)

    def single(self, state, k):
        return self.batch(np.asarray(state)[None], k)[0]


class ModelDynamics:
    """Learned option dynamics of a PodnetModel (normalized state space)."""

    def __init__(self, model):
        self.model, self.K = model, model.K

    def batch(self, states, k):
        return dynamics_predict(self.model, states, k)

    def single(self, state, k):
        return dynamics_predict(self.model, state, k)


def replay(dynamics, s0, options, duration):
    """States visited when holding each option for ``duration`` predictions."""
    out = [np.asarray(s0, dtype=np.float64)]
    for k in options:
        for _ in range(duration):
            out.append(dynamics.single(out[-1], k))
    return np.array(out)


def beam_search(dynamics, s0, goal, cfg):
    """Search option sequences whose predicted end state is closest to ``goal``.

    Each node expands K children that hold one option for ``cfg.option_duration``
    steps.  Children are ranked by (distance to goal, option sequence); the
    search stops at the first depth with a child within ``goal_eps``.
    """
    s0 = np.asarray(s0, dtype=np.float64)
    goal = np.asarray(goal, dtype=np.float64)
    if s0.shape != goal.shape:
        raise ValueError(f"start {s0.shape} and goal {goal.shape} differ in shape")
    best_opts, best_dist = (), float(np.linalg.norm(s0 - goal))
    if best_dist > cfg.goal_eps:
        beam_opts, beam_states = [()], s0[None]
        for _ in range(cfg.max_depth):
            child_opts, child_states = [], []
            for k in range(dynamics.K):
                s = beam_states
                for _ in range(cfg.option_duration):
                    s = dynamics.batch(s, k)
                child_opts.extend(o + (k,) for o in beam_opts)
                child_states.append(s)
            child_states = np.concatenate(child_states)
            dist = np.linalg.norm(child_states - goal, axis=-1)
            order = sorted(range(len(child_opts)), key=lambda i: (dist[i], child_opts[i]))
            # nodes with identical states have identical futures; keep the first
            seen, unique = set(), []
            for i in order:
                key = child_states[i].tobytes()
                if key not in seen:
                    seen.add(key)
                    unique.append(i)
            order = unique
            top = order[0]
            if dist[top] < best_dist:
                best_opts, best_dist = child_opts[top], float(dist[top])
            if dist[top] <= cfg.goal_eps:
                break
            keep = order[:cfg.beam_width]
            beam_opts = [child_opts[i] for i in keep]
            beam_states = child_states[keep]
    states = replay(dynamics, s0, best_opts, cfg.option_duration)
    terminal = float(np.linalg.norm(states[-1] - goal))
    return Plan(list(best_opts), states, terminal <= cfg.goal_eps, terminal)


def _check_state(checkpoint, x, name):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (checkpoint.model.d,):
        raise ValueError(f"{name} has shape {x.shape}, expected ({checkpoint.model.d},)")
    return x


def plan(checkpoint, s0, s_goal, cfg):
    """Plan from raw-unit ``s0`` to ``s_goal``; the returned states are normalized."""
    s0 = _check_state(checkpoint, s0, "s0")
    s_goal = _check_state(checkpoint, s_goal, "s_goal")
    norm = checkpoint.norm
    return beam_search(ModelDynamics(checkpoint.model), norm.normalize_states(s0),
                       norm.normalize_states(s_goal), cfg)


def execute(checkpoint, spec, s0, s_goal, cfg):
    """Closed-loop run: plan, hold each option for ``option_duration`` downsampled
    steps while the policy acts at every raw step, replan when the plan runs out."""
    s = _check_state(checkpoint, s0, "s0")
    s_goal = _check_state(checkpoint, s_goal, "s_goal")
    if spec.d != checkpoint.model.d:
        raise ValueError(f"environment dimension {spec.d} does not match checkpoint")
    norm, model = checkpoint.norm, checkpoint.model
    goal_n = norm.normalize_states(s_goal)
    raw_per_option = cfg.option_duration * checkpoint.config.stride
    trace = ExecutionTrace(states=[s])

    def at_goal(x):
        return np.linalg.norm(norm.normalize_states(x) - goal_n) <= cfg.goal_eps

    trace.reached = bool(at_goal(s))
    for _ in range(cfg.max_replans + 1):
        if trace.reached or len(trace.actions) >= cfg.max_exec_steps:
            break
        p = plan(checkpoint, s, s_goal, cfg)
        trace.plans.append(p)
        if not p.options:
            break
        for k in p.options:
            for _ in range(raw_per_option):
                a = norm.denormalize_actions(policy_action(model, norm.normalize_states(s), k))
                s = env_step(spec, s, a)
                trace.states.append(s)
                trace.actions.append(a)
                trace.options.append(int(k))
                if at_goal(s):
                    trace.reached = True
                if trace.reached or len(trace.actions) >= cfg.max_exec_steps:
                    break
            if trace.reached or len(trace.actions) >= cfg.max_exec_steps:
                break
    return trace


def plan_to_json(p):
    return json.dumps(p.to_dict(), indent=2) + "\n"


def config_dict(cfg):
    return asdict(cfg)
