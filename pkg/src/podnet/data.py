"""Demonstration trajectories, synthetic demonstrators, preprocessing and JSONL I/O."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ENV_NAMES = ("waypoint2d", "primitive1d")
STD_FLOOR = 1e-8


class DatasetFormatError(ValueError):
    pass


@dataclass
class Trajectory:
    id: str
    env_name: str
    states: np.ndarray
    actions: np.ndarray
    true_labels: np.ndarray | None = None

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=np.float64))
        self.actions = np.asarray(self.actions, dtype=np.float64).reshape(len(self.actions), -1) \
            if len(self.actions) else np.zeros((0, 0))
        if len(self.states) != len(self.actions) + 1:
            raise ValueError(f"trajectory {self.id!r}: {len(self.states)} states but "
                             f"{len(self.actions)} actions (need exactly one more state)")
        if self.true_labels is not None:
            self.true_labels = np.asarray(self.true_labels, dtype=np.int64)
            if len(self.true_labels) != len(self.actions):
                raise ValueError(f"trajectory {self.id!r}: labels and actions differ in length")
            if len(self.true_labels) and self.true_labels.min() < 0:
                raise ValueError(f"trajectory {self.id!r}: negative label")

    @property
    def T(self):
        return len(self.actions)

    @property
    def d(self):
        return self.states.shape[1]

    @property
    def m(self):
        return self.actions.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        same_labels = (self.true_labels is None and other.true_labels is None) or (
            self.true_labels is not None and other.true_labels is not None
            and np.array_equal(self.true_labels, other.true_labels))
        return (self.id == other.id and self.env_name == other.env_name
                and np.array_equal(self.states, other.states)
                and np.array_equal(self.actions, other.actions) and same_labels)


@dataclass
class Dataset:
    trajectories: list
    env_name: str = ""
    d: int = 0
    m: int = 0

    def __post_init__(self):
        self.trajectories = list(self.trajectories)
        if not self.trajectories:
            raise ValueError("dataset is empty")
        first = self.trajectories[0]
        self.env_name = self.env_name or first.env_name
        self.d = self.d or first.d
        self.m = self.m or first.m
        for tr in self.trajectories:
            if (tr.env_name, tr.d, tr.m) != (self.env_name, self.d, self.m):
                raise ValueError(f"trajectory {tr.id!r} does not match dataset "
                                 f"(env={self.env_name}, d={self.d}, m={self.m})")

    def __len__(self):
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    def __getitem__(self, i):
        return self.trajectories[i]

    @property
    def has_labels(self):
        return all(tr.true_labels is not None for tr in self.trajectories)


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    scale_actions: bool = True

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if np.any(self.std <= 0):
            raise ValueError("std must be strictly positive")

    def normalize_states(self, s):
        return (np.asarray(s, dtype=np.float64) - self.mean) / self.std

    def denormalize_states(self, z):
        return np.asarray(z, dtype=np.float64) * self.std + self.mean

    def normalize_actions(self, a):
        a = np.asarray(a, dtype=np.float64)
        return a / self.std if self.scale_actions else a

    def denormalize_actions(self, a):
        a = np.asarray(a, dtype=np.float64)
        return a * self.std if self.scale_actions else a

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist(),
                "scale_actions": self.scale_actions}

    @classmethod
    def from_dict(cls, d):
        return cls(d["mean"], d["std"], d.get("scale_actions", True))


# ---------------------------------------------------------------------------
# synthetic environments


@dataclass
class EnvSpec:
    """Synthetic demonstration environment.

    ``waypoints`` is only used by ``waypoint2d``; ``traj_steps`` is the raw
    number of actions per generated trajectory.
    """

    name: str
    K_true: int = 3
    max_speed: float = 0.2
    noise_std: float = 0.02
    arrival_radius: float = 0.5
    low: list = field(default_factory=lambda: [0.0, 0.0])
    high: list = field(default_factory=lambda: [10.0, 10.0])
    waypoints: list = field(default_factory=list)
    traj_steps: int = 250

    def __post_init__(self):
        if self.name not in ENV_NAMES:
            raise ValueError(f"unknown env {self.name!r}; valid envs: {', '.join(ENV_NAMES)}")
        if self.K_true < 2:
            raise ValueError("K_true must be at least 2")
        if self.noise_std < 0 or self.arrival_radius <= 0 or self.max_speed <= 0:
            raise ValueError("need noise_std >= 0, arrival_radius > 0, max_speed > 0")
        if len(self.low) != self.d or len(self.high) != self.d:
            raise ValueError(f"{self.name} bounds must have dimension {self.d}")
        if self.name == "waypoint2d" and len(self.waypoints) != self.K_true:
            raise ValueError("waypoint2d needs one waypoint per option")

    @property
    def d(self):
        return 2 if self.name == "waypoint2d" else 1

    @property
    def m(self):
        return self.d

    @property
    def velocities(self):
        return np.linspace(-0.3, 0.3, self.K_true)

    def to_dict(self):
        return {"name": self.name, "K_true": self.K_true, "max_speed": self.max_speed,
                "noise_std": self.noise_std, "arrival_radius": self.arrival_radius,
                "low": list(self.low), "high": list(self.high),
                "waypoints": [list(w) for w in self.waypoints], "traj_steps": self.traj_steps}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _sample_waypoints(K, low, high, rng, margin=1.5, min_sep=5.0):
    low, high = np.asarray(low) + margin, np.asarray(high) - margin
    sep = min_sep
    while True:
        for _ in range(2000):
            pts = rng.uniform(low, high, size=(K, 2))
            dist = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
            if np.all(dist[np.triu_indices(K, 1)] >= sep):
                return pts
        sep *= 0.9


def make_env(name, K_true=3, seed=0, **overrides):
    """Build an EnvSpec with defaults for ``name``; waypoints are drawn from ``seed``."""
    if name not in ENV_NAMES:
        raise ValueError(f"unknown env {name!r}; valid envs: {', '.join(ENV_NAMES)}")
    if name == "waypoint2d":
        kw = dict(max_speed=0.2, noise_std=0.02, arrival_radius=0.5,
                  low=[0.0, 0.0], high=[10.0, 10.0], traj_steps=500)
        kw.update(overrides)
        if "waypoints" not in kw:
            rng = np.random.default_rng(seed)
            kw["waypoints"] = _sample_waypoints(K_true, kw["low"], kw["high"], rng).tolist()
    else:
        kw = dict(max_speed=0.5, noise_std=0.02, arrival_radius=0.5,
                  low=[-100.0], high=[100.0], traj_steps=200)
        kw.update(overrides)
    return EnvSpec(name=name, K_true=K_true, **kw)


def env_step(spec, state, action):
    state = np.asarray(state, dtype=np.float64)
    action = np.asarray(action, dtype=np.float64)
    if state.shape != (spec.d,) or action.shape != (spec.m,):
        raise ValueError(f"{spec.name}: expected state dim {spec.d} and action dim {spec.m}, "
                         f"got {state.shape} and {action.shape}")
    nxt = state + np.clip(action, -spec.max_speed, spec.max_speed)
    return np.clip(nxt, spec.low, spec.high)


def _waypoint_demo(spec, rng, tid):
    W = np.asarray(spec.waypoints)
    K = spec.K_true
    s = rng.uniform(spec.low, spec.high)
    target = int(rng.integers(K))
    states, actions, labels = [s], [], []
    for _ in range(spec.traj_steps):
        if np.linalg.norm(s - W[target]) < spec.arrival_radius:
            target = int((target + rng.integers(1, K)) % K)
        a = np.clip(W[target] - s, -spec.max_speed, spec.max_speed)
        a = a + rng.normal(0.0, spec.noise_std, size=2)
        s = env_step(spec, s, a)
        states.append(s)
        actions.append(a)
        labels.append(target)
    return Trajectory(tid, spec.name, np.array(states), np.array(actions), np.array(labels))


def _primitive_demo(spec, rng, tid):
    vel = spec.velocities
    K = spec.K_true
    s = np.zeros(1)
    option = int(rng.integers(K))
    remaining = int(rng.integers(20, 41))
    states, actions, labels = [s], [], []
    for _ in range(spec.traj_steps):
        if remaining == 0:
            option = int((option + rng.integers(1, K)) % K)
            remaining = int(rng.integers(20, 41))
        a = np.array([vel[option]]) + rng.normal(0.0, spec.noise_std, size=1)
        s = env_step(spec, s, a)
        states.append(s)
        actions.append(a)
        labels.append(option)
        remaining -= 1
    return Trajectory(tid, spec.name, np.array(states), np.array(actions), np.array(labels))


def generate_dataset(spec, n_traj, seed):
    """``n_traj`` demonstrations; trajectory ``i`` uses its own stream seeded by ``(seed, i)``."""
    if n_traj < 1:
        raise ValueError("n_traj must be at least 1")
    demo = _waypoint_demo if spec.name == "waypoint2d" else _primitive_demo
    trajs = [demo(spec, np.random.default_rng([seed, i]), f"{spec.name}-{seed}-{i:05d}")
             for i in range(n_traj)]
    return Dataset(trajs, spec.name, spec.d, spec.m)


# ---------------------------------------------------------------------------
# preprocessing


def downsample(traj, stride):
    if stride < 1:
        raise ValueError("stride must be at least 1")
    idx = np.arange(0, len(traj.states), stride)
    if len(idx) < 2:
        raise ValueError(f"trajectory {traj.id!r} keeps fewer than 2 states at stride {stride}")
    kept = idx[:-1]
    labels = None if traj.true_labels is None else traj.true_labels[kept]
    return Trajectory(traj.id, traj.env_name, traj.states[idx], traj.actions[kept], labels)


def downsample_dataset(dataset, stride):
    return Dataset([downsample(tr, stride) for tr in dataset], dataset.env_name,
                   dataset.d, dataset.m)


def compute_norm_stats(dataset):
    S = np.concatenate([tr.states for tr in dataset])
    return NormStats(S.mean(axis=0), np.maximum(S.std(axis=0), STD_FLOOR),
                     scale_actions=dataset.d == dataset.m)


def apply_norm(dataset, stats):
    return Dataset([Trajectory(tr.id, tr.env_name, stats.normalize_states(tr.states),
                               stats.normalize_actions(tr.actions), tr.true_labels)
                    for tr in dataset], dataset.env_name, dataset.d, dataset.m)


def normalize(dataset):
    """Z-score states over all trajectories; actions divided by the same std."""
    if dataset is None or len(dataset) == 0:
        raise ValueError("dataset is empty")
    stats = compute_norm_stats(dataset)
    return apply_norm(dataset, stats), stats


def split(dataset, holdout_fraction, seed):
    """Trajectory-level split into (train, holdout), deterministic in ``seed``."""
    if not 0 < holdout_fraction < 1:
        raise ValueError("holdout_fraction must be in (0, 1)")
    n = len(dataset)
    n_hold = int(math.floor(holdout_fraction * n + 1e-9))
    if n_hold < 1 or n_hold > n - 1:
        raise ValueError(f"holdout fraction {holdout_fraction} leaves an empty side for {n} trajectories")
    perm = np.random.default_rng(seed).permutation(n)
    hold = sorted(perm[:n_hold].tolist())
    train = sorted(perm[n_hold:].tolist())
    make = lambda ids: Dataset([dataset[i] for i in ids], dataset.env_name, dataset.d, dataset.m)
    return make(train), make(hold)


# ---------------------------------------------------------------------------
# file I/O


def _traj_to_json(tr):
    obj = {"id": tr.id, "env": tr.env_name, "states": tr.states.tolist(),
           "actions": tr.actions.tolist()}
    if tr.true_labels is not None:
        obj["labels"] = tr.true_labels.tolist()
    return json.dumps(obj)


def dumps_dataset(dataset):
    return "".join(_traj_to_json(tr) + "\n" for tr in dataset)


def save_dataset(dataset, path):
    Path(path).write_text(dumps_dataset(dataset), encoding="utf-8")


def load_dataset(path):
    trajs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise DatasetFormatError(f"{path}:{lineno}: expected a JSON object")
            for key in ("id", "env", "states", "actions"):
                if key not in obj:
                    raise DatasetFormatError(f"{path}:{lineno}: missing required field {key!r}")
            try:
                states = np.asarray(obj["states"], dtype=np.float64)
                actions = np.asarray(obj["actions"], dtype=np.float64)
                if states.ndim != 2 or actions.ndim != 2:
                    raise ValueError("states and actions must be lists of equal-length vectors")
                trajs.append(Trajectory(str(obj["id"]), str(obj["env"]), states, actions,
                                        obj.get("labels")))
            except ValueError as exc:
                raise DatasetFormatError(f"{path}:{lineno}: {exc}") from None
    try:
        return Dataset(trajs)
    except ValueError as exc:
        raise DatasetFormatError(f"{path}: {exc}") from None


def save_env_spec(spec, path):
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2) + "\n", encoding="utf-8")


def load_env_spec(path):
    return EnvSpec.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
