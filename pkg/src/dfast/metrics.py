"""Classification metrics: accuracy, rank-statistic AUROC, sensitivity, specificity."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations
from typing import List, Optional

import numpy as np
from scipy.stats import rankdata


def binary_auroc(pos_scores, neg_scores) -> Optional[float]:
    """Mann-Whitney estimate of P(pos > neg) with ties counted one half."""
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        return None
    ranks = rankdata(np.concatenate([pos, neg]))
    u = ranks[:pos.size].sum() - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


def ovo_auroc(scores: np.ndarray, labels: np.ndarray, n_classes: Optional[int] = None) -> Optional[float]:
    """One-vs-one AUROC: each class pair contributes the mean of its two directed AUCs."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    C = n_classes or scores.shape[1]
    present = set(np.unique(labels).tolist())
    if any(c not in present for c in range(C)):
        return None
    pair_values = []
    for i, j in combinations(range(C), 2):
        in_i, in_j = labels == i, labels == j
        a_ij = binary_auroc(scores[in_i, i], scores[in_j, i])
        a_ji = binary_auroc(scores[in_j, j], scores[in_i, j])
        pair_values.append((a_ij + a_ji) / 2.0)
    return float(np.mean(pair_values))


def _rate(num: int, den: int) -> Optional[float]:
    return float(num / den) if den else None


@dataclass
class MetricsReport:
    accuracy: float
    auroc: Optional[float]
    sensitivity: Optional[float]
    specificity: Optional[float]
    tp: int
    fp: int
    tn: int
    fn: int
    confusion: List[List[int]] = field(default_factory=list)
    n: int = 0
    positive_class: int = 1

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "auroc": self.auroc,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
            "confusion": self.confusion,
            "n": self.n,
            "positive_class": self.positive_class,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**d)

    def to_text(self) -> str:
        """Line-oriented ``key=value`` rendering; undefined values print as ``null``."""
        lines = []
        for key, value in self.to_dict().items():
            if key == "confusion":
                value = ";".join(",".join(str(v) for v in row) for row in value)
            elif value is None:
                value = "null"
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{key}={value}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def compute_metrics(scores, labels, positive_class: int = 1) -> MetricsReport:
    """Metrics from ``B x C`` class scores (probabilities) and integer labels.

    Sensitivity and specificity treat ``positive_class`` against all others.
    AUROC is ``None`` when some class has no samples.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.ndim != 2 or len(scores) != len(labels) or len(labels) == 0:
        raise ValueError("scores must be B x C with B = len(labels) >= 1")
    C = scores.shape[1]
    if labels.min() < 0 or labels.max() >= C:
        raise ValueError(f"labels must lie in [0, {C})")
    if not 0 <= positive_class < C:
        raise ValueError(f"positive_class {positive_class} outside [0, {C})")
    pred = scores.argmax(axis=1)
    confusion = np.zeros((C, C), dtype=np.int64)
    np.add.at(confusion, (labels, pred), 1)
    pos_true, pos_pred = labels == positive_class, pred == positive_class
    tp = int(np.sum(pos_true & pos_pred))
    fn = int(np.sum(pos_true & ~pos_pred))
    fp = int(np.sum(~pos_true & pos_pred))
    tn = int(np.sum(~pos_true & ~pos_pred))
    if C == 2:
        neg = 1 - positive_class
        auroc = binary_auroc(scores[labels == positive_class, positive_class],
                             scores[labels == neg, positive_class])
    else:
        auroc = ovo_auroc(scores, labels, C)
    return MetricsReport(
        accuracy=float(np.mean(pred == labels)),
        auroc=auroc,
        sensitivity=_rate(tp, tp + fn),
        specificity=_rate(tn, tn + fp),
        tp=tp, fp=fp, tn=tn, fn=fn,
        confusion=confusion.tolist(),
        n=int(len(labels)),
        positive_class=positive_class,
    )
