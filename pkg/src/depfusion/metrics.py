"""Classification and estimation-error metrics."""
from __future__ import annotations

import numpy as np

from .core import SequencePartition


def _check_same_length(truth, pred):
    truth = np.asarray(truth, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if truth.shape != pred.shape:
        raise ValueError(f"length mismatch: {truth.shape} vs {pred.shape}")
    return truth, pred


def precision_recall(truth, pred, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-class precision and recall for 1-based labels; 0/0 counts as 0."""
    truth, pred = _check_same_length(truth, pred)
    classes = np.arange(1, k + 1)
    tp = np.array([np.sum((pred == c) & (truth == c)) for c in classes], dtype=float)
    n_pred = np.array([np.sum(pred == c) for c in classes], dtype=float)
    n_true = np.array([np.sum(truth == c) for c in classes], dtype=float)
    precision = np.divide(tp, n_pred, out=np.zeros(k), where=n_pred > 0)
    recall = np.divide(tp, n_true, out=np.zeros(k), where=n_true > 0)
    return precision, recall


def macro_fscore(precision, recall) -> float:
    p = np.asarray(precision, dtype=float)
    r = np.asarray(recall, dtype=float)
    s = p + r
    terms = np.divide(p * r, s, out=np.zeros_like(s), where=s > 0)
    return float(2.0 / p.size * terms.sum())


def fscore(truth, pred, k: int) -> float:
    return macro_fscore(*precision_recall(truth, pred, k))


def sequence_fscore(truth, pred, k: int, partition: SequencePartition, pooled: bool = False) -> float:
    """Macro F-score averaged over sequences, or over all items if ``pooled``."""
    if pooled:
        return fscore(truth, pred, k)
    truth, pred = _check_same_length(truth, pred)
    return float(np.mean([fscore(truth[s], pred[s], k) for s in partition.slices()]))


def induced_l1(a) -> float:
    """Induced matrix 1-norm: the largest absolute column sum."""
    a = np.asarray(a, dtype=float)
    return float(np.abs(a).sum(axis=0).max())


def confusion_error(true_confusions, est_confusions) -> float:
    """Learner-averaged induced 1-norm distance between confusion matrices."""
    t = np.asarray(true_confusions, dtype=float)
    e = np.asarray(est_confusions, dtype=float)
    if t.shape != e.shape:
        raise ValueError(f"dimension mismatch: {t.shape} vs {e.shape}")
    if t.ndim == 2:
        t, e = t[None], e[None]
    return float(np.mean([induced_l1(t[m] - e[m]) for m in range(t.shape[0])]))


def transition_error(true_t, est_t) -> float:
    t = np.asarray(true_t, dtype=float)
    e = np.asarray(est_t, dtype=float)
    if t.shape != e.shape:
        raise ValueError(f"dimension mismatch: {t.shape} vs {e.shape}")
    return induced_l1(t - e)


def span_metrics(truth, pred, in_span: int = 1) -> tuple[float, float]:
    """Word-level span precision and (uncapped) recall.

    precision = true-positive words / predicted-span words;
    recall = predicted-span words / true-span words, which can exceed 1.
    """
    truth = np.asarray(truth) == in_span
    pred = np.asarray(pred) == in_span
    if truth.shape != pred.shape:
        raise ValueError("length mismatch")
    n_pred = int(pred.sum())
    n_true = int(truth.sum())
    tp = int((pred & truth).sum())
    precision = tp / n_pred if n_pred else 0.0
    recall = n_pred / n_true if n_true else 0.0
    return precision, recall


def metric_record(name: str, value: float, fingerprint: str, seed) -> dict:
    return {"metric": name, "value": float(value), "config": fingerprint, "seed": seed}
