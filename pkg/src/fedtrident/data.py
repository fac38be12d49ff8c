"""Synthetic ordered-class task, non-IID partitioning, label flipping, CSV ingest.

Labels are 1-based: class ``c`` in ``1..E``, larger index = more hazardous.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mathcore import sample_dirichlet


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # (n, d) float64
    labels: np.ndarray  # (n,) int64, values in 1..num_classes
    num_classes: int
    feature_dim: int = field(default=-1)

    def __post_init__(self):
        X = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.ascontiguousarray(self.labels, dtype=np.int64)
        if X.ndim != 2:
            raise ValueError("features must be a 2-D array")
        if y.shape != (X.shape[0],):
            raise ValueError("labels must match the number of feature rows")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if y.size and (y.min() < 1 or y.max() > self.num_classes):
            raise ValueError(f"labels must lie in 1..{self.num_classes}")
        d = X.shape[1] if self.feature_dim < 0 else self.feature_dim
        if d != X.shape[1]:
            raise ValueError("feature_dim does not match the feature matrix")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "feature_dim", d)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def class_counts(self) -> np.ndarray:
        """Counts per class, index 0 holds class 1."""
        return np.bincount(self.labels - 1, minlength=self.num_classes)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.num_classes, self.feature_dim)


def class_means(num_classes: int, feature_dim: int, separation: float,
                offset: float = 0.5) -> np.ndarray:
    """Class centres: class c sits at ``separation * c`` along axis 0.

    Each class also gets an orthogonal offset of ``offset * separation`` on its
    own axis (when the dimension allows), so all means are linearly separable
    while distance still grows with the hazard gap ``|i - j|``.
    """
    means = np.zeros((num_classes, feature_dim))
    for c in range(1, num_classes + 1):
        means[c - 1, 0] = separation * c
        if feature_dim > num_classes:
            means[c - 1, c] = offset * separation
    # centre the cloud so inputs stay O(separation)
    means -= means.mean(axis=0)
    return means


def generate_synthetic(num_classes: int, feature_dim: int, samples_per_class: int,
                       separation: float, noise: float, rng: np.random.Generator,
                       offset: float = 0.5) -> Dataset:
    if num_classes < 2 or feature_dim < 2 or samples_per_class < 1:
        raise ValueError("need num_classes >= 2, feature_dim >= 2, samples_per_class >= 1")
    if not separation > 0 or not noise > 0:
        raise ValueError("separation and noise must be positive")
    means = class_means(num_classes, feature_dim, separation, offset)
    labels = np.repeat(np.arange(1, num_classes + 1), samples_per_class)
    X = means[labels - 1] + rng.normal(0.0, noise, size=(labels.size, feature_dim))
    return Dataset(X, labels, num_classes)


def nearest_mean_accuracy(dataset: Dataset, means: np.ndarray) -> float:
    d2 = ((dataset.features[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    pred = np.argmin(d2, axis=1) + 1
    return float(np.mean(pred == dataset.labels))


def _largest_remainder(total: int, proportions: np.ndarray) -> np.ndarray:
    raw = proportions * total
    counts = np.floor(raw).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        # stable sort keeps ties on the lower client index
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def partition_dirichlet(dataset: Dataset, num_clients: int, alpha: float,
                        rng: np.random.Generator) -> list[Dataset]:
    """Split each class across clients by a Dirichlet(alpha) share vector."""
    if len(dataset) == 0:
        raise ValueError("cannot partition an empty dataset")
    if num_clients < 1:
        raise ValueError("num_clients must be >= 1")
    if not alpha > 0:
        raise ValueError("alpha must be > 0")
    buckets: list[list[np.ndarray]] = [[] for _ in range(num_clients)]
    for c in range(1, dataset.num_classes + 1):
        idx = np.flatnonzero(dataset.labels == c)
        if idx.size == 0:
            continue
        idx = rng.permutation(idx)
        shares = sample_dirichlet(alpha, num_clients, rng)
        counts = _largest_remainder(idx.size, shares)
        bounds = np.concatenate(([0], np.cumsum(counts)))
        for k in range(num_clients):
            buckets[k].append(idx[bounds[k]:bounds[k + 1]])
    parts = []
    for k in range(num_clients):
        sel = np.sort(np.concatenate(buckets[k])) if buckets[k] else np.zeros(0, np.int64)
        parts.append(dataset.subset(sel))
    return parts


def flip_labels(dataset: Dataset, source: int, target: int) -> Dataset:
    E = dataset.num_classes
    if not (1 <= source <= E and 1 <= target <= E):
        raise ValueError(f"classes must lie in 1..{E}, got {source}->{target}")
    if source == target:
        raise ValueError("source and target classes must differ")
    if not np.any(dataset.labels == source):
        return dataset
    y = np.where(dataset.labels == source, target, dataset.labels)
    return Dataset(dataset.features, y, E, dataset.feature_dim)


def split_holdout(dataset: Dataset, fraction: float, rng: np.random.Generator) -> tuple[Dataset, Dataset]:
    """Stratified split into (rest, holdout) with ``fraction`` of every class held out."""
    hold, rest = [], []
    for c in range(1, dataset.num_classes + 1):
        idx = rng.permutation(np.flatnonzero(dataset.labels == c))
        m = int(round(fraction * idx.size))
        hold.append(idx[:m])
        rest.append(idx[m:])
    return dataset.subset(np.sort(np.concatenate(rest))), dataset.subset(np.sort(np.concatenate(hold)))


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def load_csv(path) -> Dataset:
    """Read rows of ``d`` feature columns followed by one integer label."""
    path = Path(path)
    rows: list[list[float]] = []
    labels: list[int] = []
    width = None
    with path.open(newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            cells = [cell.strip() for cell in row]
            if lineno == 1 and not rows and not _is_number(cells[0]):
                continue  # header
            if len(cells) < 2:
                raise ValueError(f"{path}:{lineno}: need at least one feature and a label")
            if width is None:
                width = len(cells)
            elif len(cells) != width:
                raise ValueError(f"{path}:{lineno}: expected {width - 1} features, got {len(cells) - 1}")
            try:
                feats = [float(v) for v in cells[:-1]]
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: malformed feature value ({exc})") from None
            try:
                label = int(cells[-1])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: label {cells[-1]!r} is not an integer") from None
            if label < 1:
                raise ValueError(f"{path}:{lineno}: labels are 1-based, got {label}")
            rows.append(feats)
            labels.append(label)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    y = np.asarray(labels, dtype=np.int64)
    return Dataset(np.asarray(rows), y, int(y.max()))
