"""Segmentation metrics against ground truth and dynamics probes."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .model import Batch, infer_labels_batch


def _as_labels(a, b):
    a = np.asarray(a, dtype=np.int64).ravel()
    b = np.asarray(b, dtype=np.int64).ravel()
    if a.size != b.size:
        raise ValueError(f"label sequences differ in length ({a.size} vs {b.size})")
    if a.size == 0:
        raise ValueError("label sequences are empty")
    return a, b


def confusion(true_labels, pred_labels):
    t, p = _as_labels(true_labels, pred_labels)
    _, ti = np.unique(t, return_inverse=True)
    _, pi = np.unique(p, return_inverse=True)
    M = np.zeros((pi.max() + 1, ti.max() + 1), dtype=np.int64)
    np.add.at(M, (pi, ti), 1)
    return M


def matched_accuracy(true_labels, pred_labels):
    """Accuracy under the best one-to-one relabeling of predicted ids (Hungarian)."""
    M = confusion(true_labels, pred_labels)
    rows, cols = linear_sum_assignment(M, maximize=True)
    return float(M[rows, cols].sum() / M.sum())


def best_mapping(true_labels, pred_labels):
    """Predicted id -> true id under the Hungarian assignment."""
    t, p = _as_labels(true_labels, pred_labels)
    tv, pv = np.unique(t), np.unique(p)
    rows, cols = linear_sum_assignment(confusion(t, p), maximize=True)
    return {int(pv[r]): int(tv[c]) for r, c in zip(rows, cols)}


def _entropy(counts):
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def normalized_mutual_information(a, b):
    """I(a;b) / sqrt(H(a) H(b)) in nats; 0 when either labeling is constant."""
    M = confusion(a, b).astype(np.float64)
    ha, hb = _entropy(M.sum(axis=1)), _entropy(M.sum(axis=0))
    if ha == 0.0 or hb == 0.0:
        return 0.0
    P = M / M.sum()
    outer = np.outer(P.sum(axis=1), P.sum(axis=0))
    nz = P > 0
    mi = float((P[nz] * np.log(P[nz] / outer[nz])).sum())
    return float(min(max(mi / np.sqrt(ha * hb), 0.0), 1.0))


def boundaries(labels):
    """Indices t where ``labels[t] != labels[t-1]``."""
    labels = np.asarray(labels)
    return set((np.flatnonzero(labels[1:] != labels[:-1]) + 1).tolist())


def _boundary_matches(true_bounds, pred_bounds, tol):
    if tol < 0:
        raise ValueError("tolerance must be non-negative")
    free = sorted(true_bounds)
    matched = 0
    for p in sorted(pred_bounds):
        for i, t in enumerate(free):
            if abs(t - p) <= tol:
                del free[i]
                matched += 1
                break
    return matched


def _f1(matched, n_pred, n_true):
    if n_pred == 0 and n_true == 0:
        return 1.0
    if matched == 0:
        return 0.0
    precision, recall = matched / n_pred, matched / n_true
    return 2 * precision * recall / (precision + recall)


def boundary_f1(true_bounds, pred_bounds, tol=1):
    """F1 of greedily matched boundaries, each predicted index pairing with the
    earliest unmatched true index within ``tol``."""
    m = _boundary_matches(true_bounds, pred_bounds, tol)
    return _f1(m, len(pred_bounds), len(true_bounds))


@dataclass
class SegmentationReport:
    matched_accuracy: float
    nmi: float
    boundary_f1: float
    per_trajectory: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def segmentation_report(true_seqs, pred_seqs, ids=None, tol=1):
    """Pooled metrics over trajectories; boundary F1 pools matched counts."""
    ids = ids if ids is not None else [str(i) for i in range(len(true_seqs))]
    rows = []
    matched = n_pred = n_true = 0
    for tid, t, p in zip(ids, true_seqs, pred_seqs):
        tb, pb = boundaries(t), boundaries(p)
        mm = _boundary_matches(tb, pb, tol)
        matched, n_pred, n_true = matched + mm, n_pred + len(pb), n_true + len(tb)
        rows.append({"id": tid, "matched_accuracy": matched_accuracy(t, p),
                     "boundary_f1": _f1(mm, len(pb), len(tb))})
    t_all = np.concatenate([np.asarray(t) for t in true_seqs])
    p_all = np.concatenate([np.asarray(p) for p in pred_seqs])
    return SegmentationReport(matched_accuracy(t_all, p_all),
                              normalized_mutual_information(t_all, p_all),
                              _f1(matched, n_pred, n_true), rows)


@dataclass
class SegmentResult:
    labels: dict
    report: SegmentationReport | None = None
    true_labels: dict | None = None


def segment(checkpoint, dataset, stride=None, tol=1):
    """Greedy option labels for every trajectory, plus a report when ground truth exists."""
    if stride is not None and stride != checkpoint.config.stride:
        raise ValueError(f"stride {stride} does not match the checkpoint stride "
                         f"{checkpoint.config.stride}")
    processed = list(checkpoint.preprocess(dataset))
    batch = Batch.from_trajectories(processed)
    hard, _ = infer_labels_batch(checkpoint.model, batch)
    labels = {tr.id: hard[b, :tr.T].copy() for b, tr in enumerate(processed)}
    truth = {tr.id: tr.true_labels for tr in processed if tr.true_labels is not None}
    report = None
    if truth:
        ids = list(truth)
        report = segmentation_report([truth[i] for i in ids], [labels[i] for i in ids], ids, tol)
    return SegmentResult(labels, report, truth or None)


def one_step_errors(dynamics, batch, labels, K):
    """Squared one-step prediction errors over valid steps.

    ``dynamics(states, onehots)`` maps (N, d), (N, K) to (N, d).
    """
    mask = batch.step_mask.astype(bool)
    s = batch.states[:, :-1][mask]
    nxt = batch.states[:, 1:][mask]
    onehot = np.eye(K)[labels[mask]]
    return ((dynamics(s, onehot) - nxt) ** 2).sum(axis=-1)


def dynamics_option_sensitivity(checkpoint, dataset, seed=0, dynamics=None):
    """Ratio of 1-step error with per-step randomly permuted labels to the error
    with inferred labels.  Values well above 1 mean the dynamics use the option."""
    if dataset is None or len(dataset) == 0:
        raise ValueError("dataset is empty")
    from .model import dynamics_predict
    model = checkpoint.model
    dyn = dynamics or (lambda s, c: dynamics_predict(model, s, c))
    batch = Batch.from_trajectories(checkpoint.preprocess(dataset))
    labels, _ = infer_labels_batch(model, batch)
    rng = np.random.default_rng(seed)
    perms = np.argsort(rng.random(labels.shape + (model.K,)), axis=-1)
    shuffled = np.take_along_axis(perms, labels[..., None], axis=-1)[..., 0]
    base = one_step_errors(dyn, batch, labels, model.K).mean()
    permuted = one_step_errors(dyn, batch, shuffled, model.K).mean()
    return float(permuted / base)


def save_labels_jsonl(labels, path):
    with open(path, "w", encoding="utf-8") as fh:
        for tid, seq in labels.items():
            fh.write(json.dumps({"id": tid, "labels": [int(x) for x in seq]}) + "\n")


def save_report(report, path):
    Path(path).write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
