"""Binary classification metrics: confusion counts, accuracy/precision/
recall/F1, and the area under the ROC curve.

The disease class is positive (label 1), normal is negative. AUC is the
trapezoidal area under the ROC traced over all score thresholds, accumulated
in integer arithmetic so tied scores contribute exactly one half, matching
the rank (Mann-Whitney) formulation bit-for-bit.
"""

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    auc: float               # NaN when only one class is present
    tp: int
    tn: int
    fp: int
    fn: int
    degenerate: tuple = ()   # names of metrics whose denominator was zero

    def to_dict(self):
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "auc": self.auc,
            "confusion": {"tp": self.tp, "tn": self.tn, "fp": self.fp, "fn": self.fn},
            "degenerate": list(self.degenerate),
        }


def confusion_counts(labels, scores, threshold=0.5):
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    if labels.shape != scores.shape or labels.ndim != 1 or labels.size == 0:
        raise ValueError("labels and scores must be equal-length non-empty 1-d arrays")
    pred = scores >= threshold
    pos = labels == 1
    tp = int(np.sum(pred & pos))
    tn = int(np.sum(~pred & ~pos))
    fp = int(np.sum(pred & ~pos))
    fn = int(np.sum(~pred & pos))
    return tp, tn, fp, fn


def compute_metrics(labels, scores, threshold=0.5):
    """Confusion-matrix metrics at a fixed threshold, plus AUC when defined.

    Precision (recall) is reported as 0 and flagged in `degenerate` when no
    positive prediction (positive label) exists.
    """
    tp, tn, fp, fn = confusion_counts(labels, scores, threshold)
    degenerate = []
    accuracy = (tp + tn) / (tp + tn + fp + fn)
    if tp + fp > 0:
        precision = tp / (tp + fp)
    else:
        precision = 0.0
        degenerate.append("precision")
    if tp + fn > 0:
        recall = tp / (tp + fn)
    else:
        recall = 0.0
        degenerate.append("recall")
    if precision + recall > 0:
        f1 = 2.0 * precision * recall / (precision + recall)
    else:
        f1 = 0.0
        degenerate.append("f1")

    labels = np.asarray(labels)
    if (labels == 1).any() and (labels == 0).any():
        auc = roc_auc(labels, scores)
    else:
        auc = math.nan
        degenerate.append("auc")
    return Metrics(accuracy=accuracy, precision=precision, recall=recall, f1=f1,
                   auc=auc, tp=tp, tn=tn, fp=fp, fn=fn,
                   degenerate=tuple(degenerate))


def roc_auc(labels, scores):
    """Trapezoidal area under the ROC over all thresholds.

    Scores are swept from high to low in groups of equal value; each group
    moves the curve by its (TP, FP) increment and the trapezoid contribution
    dfp * (2 tp_before + dtp) is accumulated as an exact integer, then divided
    by 2 * P * N once at the end.
    """
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    if labels.shape != scores.shape or labels.ndim != 1:
        raise ValueError("labels and scores must be equal-length 1-d arrays")
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")

    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]

    num = 0
    tp = 0
    i = 0
    n = scores.size
    while i < n:
        j = i
        d_tp = 0
        d_fp = 0
        while j < n and sorted_scores[j] == sorted_scores[i]:
            if sorted_labels[j] == 1:
                d_tp += 1
            else:
                d_fp += 1
            j += 1
        num += d_fp * (2 * tp + d_tp)
        tp += d_tp
        i = j
    return num / (2.0 * n_pos * n_neg)
