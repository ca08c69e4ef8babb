"""Offline training, held-out behavior-cloning score, option-count search, checkpoints."""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import nn
from .data import (Dataset, NormStats, apply_norm, downsample_dataset, normalize, split)
from .latent import TemperatureSchedule, temperature
from .model import Batch, LossHyper, PodnetModel, compute_loss, draw_noise, loss_terms

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
HISTORY_FIELDS = ("epoch", "total", "odc", "bc", "kl", "heldout_bc", "tau")


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    K: int = 3
    beta: float = 0.1
    lr: float = 1e-3
    epochs: int = 60
    batch_size: int = 16
    stride: int = 5
    horizon: int = 3
    tau0: float = 1.0
    tau_min: float = 0.5
    tau_decay_fraction: float = 0.8
    holdout_fraction: float = 0.2
    seed: int = 0
    kl_mode: str = "per_step"
    kl_sign: int = 1
    hidden: int = 64
    mlp_hidden: tuple = (64, 64)

    def __post_init__(self):
        self.mlp_hidden = tuple(self.mlp_hidden)
        if self.K < 1:
            raise ValueError("K must be at least 1 (1 only for the degenerate baseline)")
        if self.epochs < 1 or self.batch_size < 1 or self.stride < 1 or self.horizon < 1:
            raise ValueError("epochs, batch_size, stride and horizon must be positive")
        if not 0 < self.holdout_fraction < 1:
            raise ValueError("holdout_fraction must be in (0, 1)")
        if not 0 <= self.tau_decay_fraction <= 1:
            raise ValueError("tau_decay_fraction must be in [0, 1]")
        TemperatureSchedule(self.tau0, self.tau_min, 0)
        LossHyper(self.beta, self.tau0, self.horizon, self.kl_mode, self.kl_sign)

    def to_dict(self):
        d = asdict(self)
        d["mlp_hidden"] = list(self.mlp_hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown TrainConfig key(s): {', '.join(unknown)}")
        return cls(**d)

    def hyper(self, tau):
        return LossHyper(self.beta, tau, self.horizon, self.kl_mode, self.kl_sign)


@dataclass
class EpochRecord:
    epoch: int
    total: float
    odc: float
    bc: float
    kl: float
    heldout_bc: float
    tau: float


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HISTORY_FIELDS)
        for r in self.records:
            w.writerow([r.epoch] + [repr(float(getattr(r, k))) for k in HISTORY_FIELDS[1:]])
        return buf.getvalue()


@dataclass
class Checkpoint:
    config: TrainConfig
    model: PodnetModel
    summary: dict = field(default_factory=dict)
    version: int = CHECKPOINT_VERSION

    @property
    def norm(self):
        return self.model.norm

    def preprocess(self, dataset):
        """Downsample with the training stride and normalize with the training stats."""
        if dataset.d != self.model.d or dataset.m != self.model.m:
            raise ValueError(f"dataset dims (d={dataset.d}, m={dataset.m}) do not match "
                             f"checkpoint (d={self.model.d}, m={self.model.m})")
        return apply_norm(downsample_dataset(dataset, self.config.stride), self.norm)


# ---------------------------------------------------------------------------


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    size = min(batch_size, n)
    return [order[i:i + size] for i in range(0, n, size)]


def heldout_bc(model, processed):
    """Greedy-label BC loss pooled over every step of already-processed trajectories."""
    batch = Batch.from_trajectories(processed)
    return compute_loss(model, batch, LossHyper(beta=0.0, H=1), mode="greedy").bc


def prepare(dataset, config):
    """Downsample, normalize and split; returns (train, holdout, stats)."""
    if dataset is None or len(dataset) == 0:
        raise ValueError("dataset is empty")
    ds = downsample_dataset(dataset, config.stride)
    short = [tr.id for tr in ds if tr.T < config.horizon]
    if short:
        raise ValueError(f"{len(short)} trajectories have fewer than H={config.horizon} "
                         f"steps after downsampling (e.g. {short[0]!r})")
    norm_ds, stats = normalize(ds)
    train_ds, hold_ds = split(norm_ds, config.holdout_fraction, config.seed)
    return train_ds, hold_ds, stats


def train(dataset, config, progress=False):
    """Fit the option model on ``dataset``; returns ``(checkpoint, history)``.

    Deterministic in ``config.seed``: initialisation, shuffling and Gumbel
    noise each get their own child stream.
    """
    train_ds, hold_ds, stats = prepare(dataset, config)
    init_ss, shuffle_ss, noise_ss = np.random.SeedSequence(config.seed).spawn(3)
    init_rng = np.random.default_rng(init_ss)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    noise_rng = np.random.default_rng(noise_ss)

    model = PodnetModel.init(config.K, dataset.d, dataset.m, init_rng,
                             hidden=config.hidden, mlp_hidden=config.mlp_hidden, norm=stats)
    params, opt = model.params, None

    n = len(train_ds)
    per_epoch = -(-n // min(config.batch_size, n))
    decay = int(round(config.tau_decay_fraction * config.epochs * per_epoch))
    schedule = TemperatureSchedule(config.tau0, config.tau_min, decay)
    hold = list(hold_ds)

    history = TrainHistory()
    step = 0
    for epoch in range(config.epochs):
        sums = np.zeros(4)
        batches = _batches(n, config.batch_size, shuffle_rng)
        tau = schedule.tau0
        for idx in batches:
            batch = Batch.from_trajectories(train_ds[i] for i in idx)
            tau = temperature(step, schedule)
            hyper = config.hyper(tau)
            noise = draw_noise(batch, config.K, noise_rng)

            def objective(p):
                terms, _ = loss_terms(p, model, batch, hyper, noise)
                return terms["total"], terms

            _, grads, terms = nn.value_and_grad(objective, params, has_aux=True)
            sums += [float(terms[k].value) for k in ("total", "odc", "bc", "kl")]
            params, opt = nn.optimizer_step(params, grads, opt, config.lr)
            step += 1
        model = model.with_params(params)
        means = sums / len(batches)
        rec = EpochRecord(epoch, *means.tolist(), heldout_bc(model, hold), tau)
        history.records.append(rec)
        if progress:
            log.info("epoch %d total=%.4f odc=%.4f bc=%.4f kl=%.4f heldout_bc=%.4f tau=%.3f",
                     *asdict(rec).values())

    summary = asdict(history.records[-1])
    return Checkpoint(config, model, summary), history


def evaluate_bc_loss(checkpoint, heldout):
    """Mean squared action error per step with greedy labels, on raw trajectories."""
    if heldout is None or len(heldout) == 0:
        raise ValueError("held-out dataset is empty")
    return heldout_bc(checkpoint.model, list(checkpoint.preprocess(heldout)))


def discover_num_options(dataset, config, k_min, k_max, rel_tol=0.01, progress=False):
    """Hill-climb K on held-out BC loss.

    Starts at ``config.K``; tries the smaller neighbour first, then the larger
    one, and keeps walking in the first direction that improves the held-out
    loss by more than ``rel_tol``.  Returns ``(K_best, [(K, heldout_bc), ...])``
    with the table in evaluation order.
    """
    if not (2 <= k_min <= config.K <= k_max):
        raise ValueError(f"need 2 <= k_min <= K <= k_max, got {k_min}, {config.K}, {k_max}")
    scores = {}

    def score(k):
        if k not in scores:
            ckpt, hist = train(dataset, replace(config, K=k))
            scores[k] = hist[-1].heldout_bc
            if progress:
                log.info("K=%d heldout_bc=%.5f", k, scores[k])
        return scores[k]

    def improves(new, old):
        return new < old * (1.0 - rel_tol)

    k = config.K
    current = score(k)
    for step in (-1, 1):
        nxt = k + step
        if not k_min <= nxt <= k_max or not improves(score(nxt), current):
            continue
        k, current = nxt, scores[nxt]
        while k_min <= k + step <= k_max and improves(score(k + step), current):
            k += step
            current = scores[k]
        break
    table = list(scores.items())
    best = min(table, key=lambda kv: (kv[1], kv[0]))[0]
    return best, table


# ---------------------------------------------------------------------------
# checkpoint files


def checkpoint_to_dict(ckpt):
    m = ckpt.model
    return {
        "version": ckpt.version,
        "config": ckpt.config.to_dict(),
        "norm": m.norm.to_dict(),
        "params": {k: {"shape": list(v.shape), "data": v.reshape(-1).tolist()}
                   for k, v in m.params.items()},
        "summary": ckpt.summary,
    }


def checkpoint_from_dict(doc):
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {doc.get('version')!r} is not supported "
                              f"(expected {CHECKPOINT_VERSION})")
    try:
        config = TrainConfig.from_dict(doc["config"])
        norm = NormStats.from_dict(doc["norm"])
        raw = doc["params"]
        m = len(raw["policy.b%d" % (len(config.mlp_hidden))]["data"])
    except KeyError as exc:
        raise CheckpointError(f"checkpoint is missing {exc.args[0]!r}") from None
    d = len(norm.mean)
    template = PodnetModel.init(config.K, d, m, np.random.default_rng(0),
                                hidden=config.hidden, mlp_hidden=config.mlp_hidden)
    params = nn.ParamStore()
    for name, ref in template.params.items():
        if name not in raw:
            raise CheckpointError(f"checkpoint is missing tensor {name!r}")
        shape, data = tuple(raw[name]["shape"]), raw[name]["data"]
        if int(np.prod(shape)) != len(data):
            raise CheckpointError(f"tensor {name!r}: {len(data)} values for shape {list(shape)}")
        if shape != ref.shape:
            raise CheckpointError(f"tensor {name!r}: shape {list(shape)} expected {list(ref.shape)}")
        params.add(name, np.asarray(data, dtype=np.float64).reshape(shape))
    model = PodnetModel(params, config.K, d, m, config.hidden, config.mlp_hidden, norm)
    return Checkpoint(config, model, doc.get("summary", {}), doc["version"])


def save_checkpoint(ckpt, path):
    Path(path).write_text(json.dumps(checkpoint_to_dict(ckpt)) + "\n", encoding="utf-8")


def load_checkpoint(path):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not valid JSON ({exc.msg})") from None
    return checkpoint_from_dict(doc)
