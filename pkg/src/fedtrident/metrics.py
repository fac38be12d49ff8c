"""Confusion matrix and the four evaluation metrics (SRE, ASR, GAC, GAS).

Classes are 1-based in the public API. Metrics that are undefined on the
given matrix (an empty source row, an empty matrix) return ``None``.
"""
from __future__ import annotations

import math

import numpy as np

HALF_E = math.e / 2.0


def label_distance(i: int, j: int, num_classes: int | None = None) -> float:
    """Safety weight ``(e/2)**|i - j|`` between true class ``i`` and prediction ``j``."""
    if i < 1 or j < 1 or (num_classes is not None and (i > num_classes or j > num_classes)):
        raise ValueError(f"class indices out of range: ({i}, {j})")
    return HALF_E ** abs(i - j)


def distance_matrix(num_classes: int) -> np.ndarray:
    idx = np.arange(num_classes)
    return HALF_E ** np.abs(idx[:, None] - idx[None, :])


def confusion(true_labels, predicted, num_classes: int) -> np.ndarray:
    """Counts ``n[i-1, j-1]`` of samples with truth ``i`` predicted as ``j``."""
    t = np.asarray(true_labels, dtype=np.int64).ravel()
    p = np.asarray(predicted, dtype=np.int64).ravel()
    if t.shape != p.shape:
        raise ValueError(f"length mismatch: {t.size} truths vs {p.size} predictions")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    if t.size == 0:
        return cm
    if min(t.min(), p.min()) < 1 or max(t.max(), p.max()) > num_classes:
        raise ValueError(f"labels must lie in 1..{num_classes}")
    np.add.at(cm, (t - 1, p - 1), 1)
    return cm


def _source_row(cm: np.ndarray, source: int) -> np.ndarray | None:
    row = cm[source - 1]
    return row if row.sum() > 0 else None


def sre(cm: np.ndarray, source: int) -> float | None:
    row = _source_row(cm, source)
    if row is None:
        return None
    return float(row[source - 1] / row.sum())


def asr(cm: np.ndarray, source: int, target: int) -> float | None:
    if source == target:
        raise ValueError("source and target must differ")
    row = _source_row(cm, source)
    if row is None:
        return None
    return float(row[target - 1] / row.sum())


def gac(cm: np.ndarray) -> float | None:
    total = cm.sum()
    if total == 0:
        return None
    return float(np.trace(cm) / total)


def gas(cm: np.ndarray) -> float | None:
    total = cm.sum()
    if total == 0:
        return None
    weighted = float((distance_matrix(cm.shape[0]) * cm).sum())
    return float(np.trace(cm) / weighted)


def weighted_confusion(cm: np.ndarray) -> np.ndarray:
    return distance_matrix(cm.shape[0]) * cm


def evaluate(cm: np.ndarray, source: int, target: int) -> dict[str, float | None]:
    return {"sre": sre(cm, source), "asr": asr(cm, source, target), "gac": gac(cm), "gas": gas(cm)}


def precision_recall(flagged, truth) -> tuple[float | None, float | None]:
    """Precision and recall of a flagged id set against ground-truth ids."""
    flagged, truth = set(flagged), set(truth)
    tp = len(flagged & truth)
    precision = tp / len(flagged) if flagged else None
    recall = tp / len(truth) if truth else None
    return precision, recall
