"""Evaluation arithmetic: per-class P/R/F1, macro-F1, R@k, efficiency ratio.

Rates are kept as plain ratios; formatting to percent happens at output.
The functions are scale-agnostic, so percent-valued fixtures work unchanged.
"""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


@dataclass
class EvalReport:
    source_names: list
    confusion: np.ndarray  # rows = ground truth, columns = prediction
    per_class: list  # (precision, recall, f1) per source
    f1_macro: float
    r_at: dict  # k -> recall@k
    wall_time_s: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "source_names": self.source_names,
            "confusion": self.confusion.tolist(),
            "per_class": [
                {"source": s, "precision": p, "recall": r, "f1": f}
                for s, (p, r, f) in zip(self.source_names, self.per_class)
            ],
            "f1_macro": self.f1_macro,
            "r_at": {str(k): v for k, v in sorted(self.r_at.items())},
            "wall_time_s": self.wall_time_s,
        }


def f1(precision: float, recall: float) -> float:
    """Harmonic mean; 0 when both rates are 0."""
    if precision < 0 or recall < 0:
        raise ValueError("rates must be nonnegative")
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def f1_macro(per_class_f1: Sequence[float]) -> float:
    """Unweighted mean of per-class F1 scores."""
    if len(per_class_f1) == 0:
        raise ValueError("empty f1 list")
    return float(sum(per_class_f1)) / len(per_class_f1)


def recall_at_k(ranked_predictions: Sequence[Sequence[int]], labels: Sequence[int], k: int) -> float:
    """Fraction of texts whose true source is among the k top-ranked sources."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(ranked_predictions) != len(labels):
        raise ValueError("predictions and labels differ in length")
    hits = sum(1 for ranked, label in zip(ranked_predictions, labels) if label in list(ranked)[:k])
    return hits / len(labels)


def efficiency_ratio(f1_value: float, f1_ref: float, time_s: float, time_ref_s: float) -> float:
    """Quality-per-time ratio against a reference method: (f1/f1_ref) * (time_ref/time)."""
    if min(f1_value, f1_ref, time_s, time_ref_s) <= 0:
        raise ValueError("all efficiency-ratio inputs must be > 0")
    return (f1_value / f1_ref) * (time_ref_s / time_s)


def confusion_matrix(predictions: Sequence[int], labels: Sequence[int], n_classes: int) -> np.ndarray:
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    for pred, truth in zip(predictions, labels):
        counts[truth, pred] += 1
    return counts


def evaluate(
    results: Sequence,
    labels: Sequence[int],
    source_names: Sequence[str],
    wall_time_s: Optional[float] = None,
) -> EvalReport:
    """Score DetectionResults (or any objects with a .ranked list of
    (source name, prob) pairs) against integer labels."""
    if len(results) != len(labels):
        raise ValueError("results and labels differ in length")
    if len(results) == 0:
        raise ValueError("nothing to evaluate")
    source_names = list(source_names)
    index_of = {name: i for i, name in enumerate(source_names)}
    ranked_indices = [[index_of[name] for name, _ in res.ranked] for res in results]
    return evaluate_rankings(ranked_indices, labels, source_names, wall_time_s)


def evaluate_rankings(
    ranked_indices: Sequence[Sequence[int]],
    labels: Sequence[int],
    source_names: Sequence[str],
    wall_time_s: Optional[float] = None,
) -> EvalReport:
    n_classes = len(source_names)
    top1 = [ranked[0] for ranked in ranked_indices]
    counts = confusion_matrix(top1, labels, n_classes)

    per_class = []
    for i in range(n_classes):
        tp = counts[i, i]
        predicted = counts[:, i].sum()
        actual = counts[i, :].sum()
        p = float(tp / predicted) if predicted else 0.0
        r = float(tp / actual) if actual else 0.0
        per_class.append((p, r, f1(p, r)))

    return EvalReport(
        source_names=source_names,
        confusion=counts,
        per_class=per_class,
        f1_macro=f1_macro([f for _, _, f in per_class]),
        r_at={k: recall_at_k(ranked_indices, labels, k) for k in (1, 2, 3)},
        wall_time_s=wall_time_s,
    )
