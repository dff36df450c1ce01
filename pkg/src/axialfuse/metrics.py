"""Accuracy and (macro one-vs-rest) ROC AUC.

AUC is computed in the Mann-Whitney form from tie-averaged ranks, kept as an
exact rational: P(score_pos > score_neg) + 1/2 P(tie).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np


def binary_auc_exact(scores, positive) -> Fraction | None:
    """Exact AUC for one class; None when either side is empty."""
    s = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(positive, dtype=bool)
    n_pos = int(pos.sum())
    n_neg = pos.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(s, kind="stable")
    s_sorted = s[order]
    pos_sorted = pos[order]
    # Twice the rank sum of positives, using average ranks within tie groups
    # (1-based ranks i+1..j of a group average to (i+j+1)/2).
    starts = np.flatnonzero(np.r_[True, s_sorted[1:] != s_sorted[:-1]])
    ends = np.r_[starts[1:], s_sorted.size]
    twice_rank_sum = 0
    for i, j in zip(starts.tolist(), ends.tolist()):
        k = int(pos_sorted[i:j].sum())
        if k:
            twice_rank_sum += k * (i + j + 1)
    u2 = twice_rank_sum - n_pos * (n_pos + 1)
    return Fraction(u2, 2 * n_pos * n_neg)


@dataclass
class AucResult:
    value: float | None
    per_class: dict[int, Fraction] = field(default_factory=dict)
    skipped: list[int] = field(default_factory=list)
    exact: Fraction | None = None


def macro_ovr_auc(scores, labels, num_classes: int | None = None) -> AucResult:
    """Unweighted mean of per-class one-vs-rest AUCs.

    ``scores`` is (N, K) with column k the score for class k. Classes without
    at least one positive and one negative are skipped and listed.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    k = scores.shape[1] if num_classes is None else num_classes
    per_class, skipped = {}, []
    for c in range(k):
        a = binary_auc_exact(scores[:, c], labels == c)
        if a is None:
            skipped.append(c)
        else:
            per_class[c] = a
    if not per_class:
        return AucResult(None, per_class, skipped)
    exact = sum(per_class.values(), Fraction(0)) / len(per_class)
    return AucResult(float(exact), per_class, skipped, exact)


def auc(scores, labels, task: str = "multiclass", num_classes: int | None = None) -> AucResult:
    """Binary tasks score class 1 only; multiclass uses the macro OVR mean."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if task == "binary":
        col = scores[:, 1] if scores.ndim == 2 else scores
        a = binary_auc_exact(col, labels == 1)
        return AucResult(None if a is None else float(a), {} if a is None else {1: a}, [], a)
    return macro_ovr_auc(scores, labels, num_classes)


def accuracy(pred, labels) -> float:
    pred, labels = np.asarray(pred), np.asarray(labels)
    if labels.size == 0:
        return 0.0
    return int((pred == labels).sum()) / labels.size
