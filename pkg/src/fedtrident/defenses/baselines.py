"""Comparison aggregators: Krum, trimmed mean, coordinate median, FoolsGold, FLAME.

All functions take flat parameter stacks or ModelParams sequences and return
ModelParams; the ones that define a good/bad split also return it.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .. import _kernels
from ..model import ModelParams, output_layer_indices
from .gmm import gmm_fit


@dataclass(frozen=True)
class BaselineConfig:
    trim_fraction: float = 0.2
    foolsgold_horizon: int | None = None  # None = whole run
    flame_lambda: float = 0.001

    def __post_init__(self):
        if not 0 <= self.trim_fraction < 0.5:
            raise ValueError("trim_fraction must lie in [0, 0.5)")
        if self.flame_lambda < 0:
            raise ValueError("flame_lambda must be >= 0")


def _stack(models: Sequence[ModelParams]) -> np.ndarray:
    dims = {m.dims for m in models}
    if len(dims) != 1:
        raise ValueError("models have mismatched dimensions")
    return np.stack([m.flat for m in models])


def krum_scores(models: Sequence[ModelParams]) -> np.ndarray:
    """Summed squared distance from each model to every other one."""
    return _kernels.pairwise_sq_dists(_stack(models)).sum(axis=1)


def krum(models: Sequence[ModelParams]) -> tuple[ModelParams, int]:
    """Select the model with the smallest summed squared distance (ties -> first)."""
    if len(models) < 2:
        raise ValueError("krum needs at least 2 models")
    chosen = int(np.argmin(krum_scores(models)))
    return models[chosen], chosen


def trimmed_mean(models: Sequence[ModelParams], trim_fraction: float = 0.2) -> ModelParams:
    P = _stack(models)
    n = P.shape[0]
    k = int(np.floor(trim_fraction * n))
    if 2 * k >= n:
        raise ValueError(f"cannot trim {k} from each side of {n} models")
    if k == 0:
        return models[0].with_flat(P.mean(axis=0))  # same summation order as plain averaging
    S = np.sort(P, axis=0)
    return models[0].with_flat(S[k:n - k].mean(axis=0))


def coordinate_median(models: Sequence[ModelParams]) -> ModelParams:
    if not models:
        raise ValueError("coordinate_median needs at least 1 model")
    return models[0].with_flat(np.median(_stack(models), axis=0))


def _cosine_matrix(H: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(H, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    U = H / safe[:, None]
    C = U @ U.T
    C[norms == 0, :] = 0.0
    C[:, norms == 0] = 0.0
    return np.clip(C, -1.0, 1.0)


def foolsgold_weights(histories) -> np.ndarray:
    """Per-client weights from accumulated output-layer update histories.

    Follows the reference FoolsGold steps: max pairwise cosine per client,
    pardoning of clients less similar than their peers, weight normalisation
    to the max, and the logit squash clamped to [0, 1].
    """
    H = np.atleast_2d(np.asarray(histories, dtype=np.float64))
    n = H.shape[0]
    if n == 1:
        return np.ones(1)
    cs = _cosine_matrix(H) - np.eye(n)
    maxcs = cs.max(axis=1)
    for i in range(n):
        for j in range(n):
            # pardon only against positively similar peers; a client whose best
            # match is anti-aligned is nobody's sybil
            if i != j and maxcs[i] < maxcs[j] and maxcs[j] > 0.0:
                cs[i, j] = cs[i, j] * max(maxcs[i], 0.0) / maxcs[j]
    wv = 1.0 - cs.max(axis=1)
    wv = np.clip(wv, 0.0, 1.0)
    top = wv.max()
    if top <= 0.0:
        return np.zeros(n)
    wv = wv / top
    wv[wv == 1.0] = 0.99
    with np.errstate(divide="ignore"):
        wv = np.log(wv / (1.0 - wv)) + 0.5
    wv[np.isinf(wv) & (wv > 0)] = 1.0
    wv[np.isinf(wv) & (wv < 0)] = 0.0
    return np.clip(wv, 0.0, 1.0)


class FoolsGold:
    """Keeps per-client output-layer update histories across rounds."""

    def __init__(self, horizon: int | None = None):
        self.horizon = horizon
        self._hist: dict[int, list[np.ndarray]] = {}

    def history(self, client_id: int) -> np.ndarray:
        rows = self._hist[client_id]
        if self.horizon is not None:
            rows = rows[-self.horizon:]
        return np.sum(rows, axis=0)

    def aggregate(self, models: Sequence[ModelParams], previous: ModelParams,
                  participants: Sequence[int]) -> tuple[ModelParams, np.ndarray]:
        out_idx = output_layer_indices(previous)
        for m, k in zip(models, participants):
            self._hist.setdefault(int(k), []).append(m.flat[out_idx] - previous.flat[out_idx])
        w = foolsgold_weights(np.stack([self.history(int(k)) for k in participants]))
        if w.sum() <= 0:
            return previous, w
        deltas = _stack(models) - previous.flat
        return previous.with_flat(previous.flat + (w / w.sum()) @ deltas), w


def flame(models: Sequence[ModelParams], previous: ModelParams, lam: float,
          rng: np.random.Generator) -> tuple[ModelParams, list[int]]:
    """Cosine-distance clustering, median-norm clipping, averaging, Gaussian noise.

    Returns the new model and the row indices of admitted models.
    """
    if len(models) < 2:
        raise ValueError("flame needs at least 2 models")
    deltas = _stack(models) - previous.flat
    n = deltas.shape[0]
    dist = 1.0 - _cosine_matrix(deltas)
    gmm = gmm_fit(dist)
    if gmm.degenerate:
        admitted = list(range(n))
    else:
        labels = gmm.hard_labels()
        sizes = np.bincount(labels, minlength=2)
        major = int(np.argmax(sizes))  # tie -> component 0
        admitted = [i for i in range(n) if labels[i] == major]
    norms = np.linalg.norm(deltas, axis=1)
    clip = float(np.median(norms[admitted]))
    scale = np.ones(n)
    big = norms > clip
    scale[big] = clip / norms[big]
    agg = (deltas[admitted] * scale[admitted, None]).mean(axis=0)
    sigma = lam * clip
    if sigma > 0:
        agg = agg + rng.normal(0.0, sigma, size=agg.shape)
    return previous.with_flat(previous.flat + agg), admitted
