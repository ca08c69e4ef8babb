"""Option inference, policy and dynamics networks, and the training objective.

Three networks share one ParamStore:

* ``inference.*`` -- LSTM over ``[s_t, c_{t-1}]`` with a linear head to K logits,
* ``policy.*``    -- MLP ``[s_t, c_t] -> a_t``,
* ``dynamics.*``  -- MLP ``[s_t, c_t] -> s_{t+1}`` (next downsampled state).

Everything here works in normalized units.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import latent, nn
from .data import NormStats
from .latent import CategoricalPosterior, OptionLabel

KL_MODES = ("per_step", "marginal")


@dataclass
class PodnetModel:
    params: nn.ParamStore
    K: int
    d: int
    m: int
    hidden: int = 64
    mlp_hidden: tuple = (64, 64)
    norm: NormStats | None = None

    @classmethod
    def init(cls, K, d, m, rng, hidden=64, mlp_hidden=(64, 64), norm=None):
        if K < 1:
            raise ValueError("K must be positive")
        params = nn.ParamStore()
        nn.init_lstm(params, "inference.lstm", d + K, hidden, rng)
        nn.init_mlp(params, "inference.head", [hidden, K], rng)
        nn.init_mlp(params, "policy", [d + K, *mlp_hidden, m], rng)
        nn.init_mlp(params, "dynamics", [d + K, *mlp_hidden, d], rng)
        return cls(params, K, d, m, hidden, tuple(mlp_hidden), norm)

    def with_params(self, params):
        return PodnetModel(params, self.K, self.d, self.m, self.hidden, self.mlp_hidden, self.norm)


@dataclass
class OptionAssignment:
    labels: list
    posteriors: list

    @property
    def hard_indices(self):
        return np.array([lab.index for lab in self.labels], dtype=np.int64)


@dataclass
class LossBreakdown:
    total: float
    odc: float
    bc: float
    kl: float


@dataclass
class LossHyper:
    beta: float = 0.1
    tau: float = 1.0
    H: int = 3
    kl_mode: str = "per_step"
    kl_sign: int = 1

    def __post_init__(self):
        if self.kl_mode not in KL_MODES:
            raise ValueError(f"kl_mode must be one of {KL_MODES}")
        if self.kl_sign not in (1, -1):
            raise ValueError("kl_sign must be +1 or -1")
        if self.H < 1:
            raise ValueError("horizon must be at least 1")


@dataclass
class Batch:
    """Padded stack of normalized, downsampled trajectories.

    ``states`` is (B, T+1, d), ``actions`` (B, T, m), ``lengths`` holds each
    trajectory's own action count.  Padded states repeat the last real state.
    """

    states: np.ndarray
    actions: np.ndarray
    lengths: np.ndarray
    ids: list = field(default_factory=list)

    @classmethod
    def from_trajectories(cls, trajs):
        trajs = list(trajs)
        if not trajs:
            raise ValueError("empty batch")
        T = max(tr.T for tr in trajs)
        d, m = trajs[0].d, trajs[0].m
        S = np.zeros((len(trajs), T + 1, d))
        A = np.zeros((len(trajs), T, m))
        for b, tr in enumerate(trajs):
            S[b, :tr.T + 1] = tr.states
            S[b, tr.T + 1:] = tr.states[-1]
            A[b, :tr.T] = tr.actions
        return cls(S, A, np.array([tr.T for tr in trajs]), [tr.id for tr in trajs])

    @property
    def T(self):
        return self.actions.shape[1]

    @property
    def step_mask(self):
        return (np.arange(self.T)[None, :] < self.lengths[:, None]).astype(np.float64)


def _check_dims(model, states):
    if np.shape(states)[-1] != model.d:
        raise ValueError(f"state dimension {np.shape(states)[-1]} does not match model d={model.d}")


def _infer(params, model, S, tau, noise=None, frozen=None):
    """Run the inference LSTM over (B, T+1, d) states.

    Returns per-step label tensors, logits tensors and (hard, soft) values.
    """
    B, T = S.shape[0], S.shape[1] - 1
    state = nn.LstmState.zeros(model.hidden, batch=B)
    c_prev = nn.Tensor(np.zeros((B, model.K)))
    labels, logits_seq, trace = [], [], []
    for t in range(T):
        x = nn.concat([nn.Tensor(S[:, t]), c_prev], axis=-1)
        h, state = nn.lstm_step(params, "inference.lstm", x, state)
        logits = nn.mlp_forward(params, "inference.head", h)
        z = logits if noise is None else logits + noise[:, t]
        soft = nn.softmax(z / tau if noise is not None else z)
        if frozen is None:
            hard = latent.one_hot_argmax(soft.value)
            c = nn.straight_through(hard, soft)
        else:
            hard, anchor = frozen[t]
            c = nn.straight_through(hard, soft, anchor=anchor)
        labels.append(c)
        logits_seq.append(logits)
        trace.append((hard, soft.value))
        c_prev = c
    return labels, logits_seq, trace


def _masked_mean(x, mask):
    return (x * mask).sum() / float(mask.sum())


def loss_terms(params, model, batch, hyper, noise=None, frozen=None):
    """Differentiable loss pieces as Tensors.

    ``noise`` is (B, T, K) Gumbel noise; ``None`` selects greedy labels.
    ``frozen`` replays the (hard, soft) label values of an earlier call so the
    straight-through path becomes a smooth function (used for gradient checks).
    Returns ``(terms, trace)`` where terms has keys total/odc/bc/kl.
    """
    S, A = batch.states, batch.actions
    _check_dims(model, S)
    T, H = batch.T, hyper.H
    if np.any(batch.lengths < H):
        raise ValueError(f"every trajectory needs at least H={H} downsampled steps")
    mask = batch.step_mask

    labels, logits_seq, trace = _infer(params, model, S, hyper.tau, noise, frozen)
    C = nn.stack(labels, axis=1)
    S_now = nn.Tensor(S[:, :T])

    pred_a = nn.mlp_forward(params, "policy", nn.concat([S_now, C], axis=-1))
    bc = _masked_mean(nn.square(nn.Tensor(A) - pred_a).sum(axis=-1), mask)

    odc_sum, odc_count = 0.0, 0.0
    pred = S_now
    t_idx = np.arange(T)
    for j in range(1, H + 1):
        n = T - j + 1
        pred = nn.mlp_forward(params, "dynamics",
                              nn.concat([pred[:, :n], C[:, j - 1:T]], axis=-1))
        valid = ((t_idx[None, :n] + j) <= batch.lengths[:, None]).astype(np.float64)
        err = nn.square(nn.Tensor(S[:, j:T + 1]) - pred).sum(axis=-1)
        odc_sum = (err * valid).sum() + odc_sum
        odc_count += valid.sum()
    odc = odc_sum * (1.0 / odc_count)

    logits = nn.stack(logits_seq, axis=1)
    if hyper.kl_mode == "per_step":
        kl = _masked_mean(latent.kl_to_uniform_tensor(logits), mask)
    else:
        probs = nn.softmax(logits)
        pbar = (probs * mask[..., None]).sum(axis=(0, 1)) * (1.0 / mask.sum())
        kl = (pbar * (nn.log(pbar) + np.log(model.K))).sum()

    total = odc + bc + (hyper.kl_sign * hyper.beta) * kl
    return {"total": total, "odc": odc, "bc": bc, "kl": kl}, trace


def draw_noise(batch, K, rng):
    return rng.gumbel(0.0, 1.0, size=(len(batch.lengths), batch.T, K))


def compute_loss(model, batch, hyper, rng=None, mode="sampled", noise=None):
    """Composite loss ``odc + bc + kl_sign * beta * kl`` as a LossBreakdown."""
    if not isinstance(batch, Batch):
        batch = Batch.from_trajectories(batch)
    if mode == "sampled" and noise is None:
        if rng is None:
            raise ValueError("sampled mode needs an rng or explicit noise")
        noise = draw_noise(batch, model.K, rng)
    elif mode == "greedy":
        noise = None
    elif mode != "sampled":
        raise ValueError(f"unknown mode {mode!r}")
    terms, _ = loss_terms(model.params, model, batch, hyper, noise)
    vals = {k: float(v.value) for k, v in terms.items()}
    if not all(np.isfinite(v) for v in vals.values()):
        raise FloatingPointError(f"non-finite loss: {vals}")
    return LossBreakdown(**vals)


# ---------------------------------------------------------------------------
# single-trajectory / single-state helpers


def infer_options(model, states, tau=1.0, rng=None, mode="greedy"):
    """Option labels for one normalized trajectory of T+1 states (T labels)."""
    S = np.atleast_2d(np.asarray(states, dtype=np.float64))
    _check_dims(model, S)
    if len(S) < 2:
        raise ValueError("need at least two states")
    noise = None
    if mode == "sampled":
        if rng is None:
            raise ValueError("sampled mode needs an rng")
        noise = rng.gumbel(0.0, 1.0, size=(1, len(S) - 1, model.K))
    elif mode != "greedy":
        raise ValueError(f"unknown mode {mode!r}")
    _, logits_seq, trace = _infer(model.params, model, S[None], tau, noise)
    labels = [OptionLabel(soft[0], hard[0]) for hard, soft in trace]
    posts = [CategoricalPosterior.from_logits(lg.value[0]) for lg in logits_seq]
    return OptionAssignment(labels, posts)


def infer_labels_batch(model, batch):
    """Greedy hard labels (B, T) and posterior probabilities (B, T, K)."""
    _, logits_seq, trace = _infer(model.params, model, batch.states, 1.0)
    hard = np.stack([h for h, _ in trace], axis=1)
    logits = np.stack([lg.value for lg in logits_seq], axis=1)
    return hard.argmax(axis=-1), latent.softmax(logits)


def _option_vec(model, option):
    if isinstance(option, OptionLabel):
        vec = option.hard
    elif np.isscalar(option):
        vec = np.eye(model.K)[int(option)]
    else:
        vec = np.asarray(option, dtype=np.float64)
    if vec.shape[-1] != model.K:
        raise ValueError(f"option vector has size {vec.shape[-1]}, expected K={model.K}")
    return vec


def policy_action(model, state, option):
    state = np.asarray(state, dtype=np.float64)
    _check_dims(model, state)
    x = np.concatenate([state, np.broadcast_to(_option_vec(model, option), state.shape[:-1] + (model.K,))], axis=-1)
    return nn.mlp_forward(model.params, "policy", x).value


def dynamics_predict(model, state, option):
    state = np.asarray(state, dtype=np.float64)
    _check_dims(model, state)
    x = np.concatenate([state, np.broadcast_to(_option_vec(model, option), state.shape[:-1] + (model.K,))], axis=-1)
    return nn.mlp_forward(model.params, "dynamics", x).value


def rollout_dynamics(model, state, options, H):
    """``H`` iterated dynamics predictions; returns H+1 states including the start."""
    if H < 0 or H > len(options):
        raise ValueError(f"horizon {H} must be within [0, {len(options)}]")
    out = [np.asarray(state, dtype=np.float64)]
    for j in range(H):
        out.append(dynamics_predict(model, out[-1], options[j]))
    return np.array(out)


def posterior_entropy(probs):
    p = np.maximum(probs, latent.PROB_FLOOR)
    return -(probs * np.log(p)).sum(axis=-1)
