"""Multi-label evaluation: per-class/macro/micro F1 and rank-based AUC."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "PredictionBatch",
    "per_class_f1",
    "macro_f1",
    "micro_f1",
    "auc",
]


@dataclass
class PredictionBatch:
    """Scores in [0, 1] and binary targets, shape (n_samples, n_classes)."""

    scores: np.ndarray
    targets: np.ndarray
    class_names: tuple = ()

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.targets = np.asarray(self.targets)
        if self.scores.shape != self.targets.shape:
            raise ValueError("scores and targets must have the same shape")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("non-finite scores")
        if not self.class_names:
            self.class_names = tuple(
                f"class_{i}" for i in range(self.scores.shape[1])
            )


def _confusion(pred: PredictionBatch, threshold: float):
    if not 0 <= threshold <= 1:
        raise ValueError("threshold must lie in [0, 1]")
    decided = pred.scores >= threshold
    actual = pred.targets.astype(bool)
    tp = np.sum(decided & actual, axis=0)
    fp = np.sum(decided & ~actual, axis=0)
    fn = np.sum(~decided & actual, axis=0)
    return tp, fp, fn


def per_class_f1(pred: PredictionBatch, threshold: float = 0.5) -> np.ndarray:
    """F1 per class; an empty confusion (TP=FP=FN=0) scores 1.0 by convention."""
    tp, fp, fn = _confusion(pred, threshold)
    denom = 2 * tp + fp + fn
    out = np.ones(len(tp), dtype=np.float64)
    nonempty = denom > 0
    out[nonempty] = 2.0 * tp[nonempty] / denom[nonempty]
    return out


def macro_f1(pred: PredictionBatch, threshold: float = 0.5) -> float:
    scores = per_class_f1(pred, threshold)
    return float(scores.sum() / len(scores))


def micro_f1(pred: PredictionBatch, threshold: float = 0.5) -> float:
    tp, fp, fn = _confusion(pred, threshold)
    denom = 2 * tp.sum() + fp.sum() + fn.sum()
    if denom == 0:
        return 1.0
    return float(2.0 * tp.sum() / denom)


def _rank_auc(scores, targets):
    """P(random positive outranks random negative), ties counted half."""
    order = np.argsort(scores, kind="mergesort")
    s_sorted = scores[order]
    ranks = np.empty(len(scores), dtype=np.float64)
    i = 0
    while i < len(s_sorted):
        j = i
        while j + 1 < len(s_sorted) and s_sorted[j + 1] == s_sorted[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average 1-based rank
        i = j + 1
    pos = targets.astype(bool)
    n_pos, n_neg = pos.sum(), (~pos).sum()
    return (ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def auc(pred: PredictionBatch):
    """Per-class AUC plus macro average.

    Returns (per_class, macro, skipped) where per_class holds NaN for
    classes lacking both a positive and a negative; those are listed in
    `skipped` and excluded from the macro average.
    """
    n_classes = pred.scores.shape[1]
    out = np.full(n_classes, np.nan)
    skipped = []
    for c in range(n_classes):
        t = pred.targets[:, c]
        if t.sum() == 0 or t.sum() == len(t):
            skipped.append(pred.class_names[c])
            continue
        out[c] = _rank_auc(pred.scores[:, c], t)
    valid = ~np.isnan(out)
    macro = float(out[valid].mean()) if valid.any() else float("nan")
    return out, macro, skipped
