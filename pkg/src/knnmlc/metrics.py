"""Multi-label evaluation: per-class confusion counts, micro/macro
precision/recall/F1, per-frequency-group reports, and hamming loss as an
auxiliary metric.

Zero-denominator convention (stated because it changes macro-F1): a precision
or recall whose denominator is 0 contributes 0, and F1 is 0 whenever P+R = 0.
The macro average runs over ALL classes, including ones absent from the gold.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ConfusionCounts",
    "confusion",
    "group_report",
    "hamming_loss",
    "macro_prf",
    "micro_prf",
]


@dataclass
class ConfusionCounts:
    """Per-class true positive / false positive / false negative counts."""

    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray

    @property
    def num_classes(self) -> int:
        return len(self.tp)


def _as_matrix(rows) -> np.ndarray:
    m = np.asarray(rows, dtype=np.int64)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-d array of binary label rows, got shape {m.shape}")
    return m


def confusion(gold, pred) -> ConfusionCounts:
    """Count tp/fp/fn per class over aligned gold and predicted label rows."""
    g = _as_matrix(gold)
    p = _as_matrix(pred)
    if g.shape != p.shape:
        raise ValueError(f"gold shape {g.shape} != pred shape {p.shape}")
    tp = np.sum((g == 1) & (p == 1), axis=0)
    fp = np.sum((g == 0) & (p == 1), axis=0)
    fn = np.sum((g == 1) & (p == 0), axis=0)
    return ConfusionCounts(tp=tp, fp=fp, fn=fn)


def _prf(tp: float, fp: float, fn: float):
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def micro_prf(counts: ConfusionCounts):
    """Pool counts across classes, then compute P/R/F1."""
    return _prf(float(counts.tp.sum()), float(counts.fp.sum()), float(counts.fn.sum()))


def macro_prf(counts: ConfusionCounts):
    """Unweighted mean of per-class P/R/F1 over all classes."""
    per_class = [_prf(float(t), float(f), float(n)) for t, f, n in zip(counts.tp, counts.fp, counts.fn)]
    arr = np.asarray(per_class, dtype=np.float64)
    p, r, f1 = arr.mean(axis=0)
    return float(p), float(r), float(f1)


def group_report(counts: ConfusionCounts, groups: dict[int, int]) -> dict[int, dict]:
    """Micro P/R/F1 restricted to each group's labels.

    ``groups`` must assign every class to exactly one group. A group with no
    gold positives and no predictions gets f1 0 and defined=False.
    """
    if sorted(groups) != list(range(counts.num_classes)):
        raise ValueError("groups must partition the label set")
    report: dict[int, dict] = {}
    for g in sorted(set(groups.values())):
        members = [c for c, gg in groups.items() if gg == g]
        tp = float(counts.tp[members].sum())
        fp = float(counts.fp[members].sum())
        fn = float(counts.fn[members].sum())
        precision, recall, f1 = _prf(tp, fp, fn)
        report[g] = {
            "labels": members,
            "precision": precision,
            "recall": recall,
            "f1": f1,
            "tp": int(tp),
            "fp": int(fp),
            "fn": int(fn),
            "defined": bool(tp + fp + fn > 0),
        }
    return report


def hamming_loss(gold, pred) -> float:
    """Fraction of label decisions that are wrong."""
    g = _as_matrix(gold)
    p = _as_matrix(pred)
    if g.shape != p.shape:
        raise ValueError(f"gold shape {g.shape} != pred shape {p.shape}")
    return float(np.mean(g != p))
