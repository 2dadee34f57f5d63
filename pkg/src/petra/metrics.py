"""Quality metrics: ROC-AUC, macro F1, RMSE."""

import numpy as np
from scipy.stats import rankdata


def roc_auc(scores, labels) -> float:
    """Probability that a random positive outranks a random negative, ties counted one half.

    Rank (Mann-Whitney U) formulation, O(n log n).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.size == 0 or scores.shape != labels.shape:
        raise ValueError("roc_auc needs equal-length non-empty inputs")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("degenerate labels: both classes must be present")
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def f1_macro(preds, labels) -> float:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.size == 0 or preds.shape != labels.shape:
        raise ValueError("f1_macro needs equal-length non-empty inputs")
    f1s = []
    for c in np.union1d(preds, labels):
        tp = np.sum((preds == c) & (labels == c))
        fp = np.sum((preds == c) & (labels != c))
        fn = np.sum((preds != c) & (labels == c))
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(f1s))


def rmse(preds, targets) -> float:
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.size == 0 or preds.shape != targets.shape:
        raise ValueError("rmse needs equal-length non-empty inputs")
    return float(np.sqrt(np.mean((preds - targets) ** 2)))


def quality(task_kind: str, scores, targets) -> float:
    """Raw task metric from ``scores_from_output`` values."""
    if task_kind == "binary":
        return roc_auc(scores, targets)
    if task_kind == "multiclass":
        return f1_macro(scores, targets)
    return rmse(scores, targets)


def oriented(task_kind: str, value: float) -> float:
    """Map a raw quality value to higher-is-better."""
    return -value if task_kind == "regression" else value
