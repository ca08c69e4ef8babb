"""Categorical latent machinery: Gumbel-Softmax, straight-through labels, KL to uniform."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class CategoricalPosterior:
    logits: np.ndarray
    probs: np.ndarray

    @classmethod
    def from_logits(cls, logits):
        logits = np.asarray(logits, dtype=np.float64)
        return cls(logits, softmax(logits))


@dataclass(frozen=True)
class OptionLabel:
    """``soft`` is a point on the simplex, ``hard`` the one-hot of its argmax."""

    soft: np.ndarray
    hard: np.ndarray

    @property
    def index(self):
        return int(np.argmax(self.hard))

    @classmethod
    def one_hot(cls, k, K):
        h = np.zeros(K)
        h[k] = 1.0
        return cls(h.copy(), h)


@dataclass(frozen=True)
class TemperatureSchedule:
    tau0: float = 1.0
    tau_min: float = 0.5
    decay_steps: int = 1000

    def __post_init__(self):
        if not (self.tau0 >= self.tau_min > 0):
            raise ValueError(f"need tau0 >= tau_min > 0, got {self.tau0}, {self.tau_min}")
        if self.decay_steps < 0:
            raise ValueError("decay_steps must be non-negative")


def softmax(logits, axis=-1):
    z = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def one_hot_argmax(x, axis=-1):
    """One-hot of argmax along ``axis``; ties go to the lowest index."""
    x = np.asarray(x)
    idx = np.argmax(x, axis=axis)
    out = np.zeros_like(x, dtype=np.float64)
    np.put_along_axis(out, np.expand_dims(idx, axis), 1.0, axis=axis)
    return out


def _check_k(logits):
    if np.shape(logits)[-1] < 2:
        raise ValueError("need at least two categories")


def sample_gumbel(shape, rng):
    return rng.gumbel(0.0, 1.0, size=shape)


def sample_gumbel_softmax(logits, tau, rng):
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    logits = np.asarray(logits, dtype=np.float64)
    _check_k(logits)
    soft = softmax((logits + sample_gumbel(logits.shape, rng)) / tau)
    return OptionLabel(soft, one_hot_argmax(soft))


def greedy_label(logits):
    logits = np.asarray(logits, dtype=np.float64)
    _check_k(logits)
    soft = softmax(logits)
    return OptionLabel(soft, one_hot_argmax(logits))


def gumbel_softmax_st(logits, tau, noise=None, anchor=None):
    """Straight-through Gumbel-Softmax on a Tensor of logits.

    Forward value is the hard one-hot, gradients follow the relaxed sample.
    With ``noise=None`` no perturbation is added (greedy labels).
    Returns ``(label_tensor, soft_values)``.
    """
    z = logits if noise is None else logits + noise
    soft = nn.softmax(z / tau if noise is not None else z)
    hard = one_hot_argmax(soft.value)
    return nn.straight_through(hard, soft, anchor=anchor), soft.value


def kl_to_uniform(probs, tol=1e-6):
    """``sum p_i ln(p_i K)``, i.e. ``ln K - H(p)``, with probabilities floored at 1e-12."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size < 1 or np.any(p < -tol) or abs(p.sum() - 1.0) > tol:
        raise ValueError("probs must lie on the probability simplex")
    K = p.size
    q = np.maximum(p, PROB_FLOOR)
    return float(np.sum(p * np.log(q * K)))


def kl_to_uniform_tensor(logits, axis=-1):
    """Per-row KL(softmax(logits) || uniform) as a Tensor, computed from log-probs."""
    K = logits.shape[axis]
    logp = nn.log_softmax(logits, axis=axis)
    p = nn.exp(logp)
    return (p * (logp + np.log(K))).sum(axis=axis)


def temperature(step, schedule):
    """Exponential decay from ``tau0`` at step 0 to ``tau_min`` at ``decay_steps``."""
    if step <= 0:
        return float(schedule.tau0)
    if schedule.decay_steps == 0 or step >= schedule.decay_steps:
        return float(schedule.tau_min)
    frac = step / schedule.decay_steps
    return float(schedule.tau0 * (schedule.tau_min / schedule.tau0) ** frac)
