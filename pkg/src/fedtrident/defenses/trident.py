"""Neuron-wise poisoned-model detection, validation, rating and unlearning.

Neurons and classes are 1-based throughout. Each output neuron ``l`` owns the
``h + 1`` parameters in row ``l`` of ``W2`` plus ``b2[l]``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .. import metrics
from ..data import Dataset
from ..model import ModelParams, output_neuron_indices, predict
from ..state import ClientRecord
from .gmm import GmmModel, gmm_fit

log = logging.getLogger(__name__)

DENSITY_RATIO_MIN = 1.2
ZERO_MEAN_TOL = 1e-12


@dataclass(frozen=True)
class RatingPolicy:
    r_max: float = 1.0
    r_min: float = 0.0
    r_init: float = 0.80
    reward: float = 0.05
    penalty_unit: float = 0.15
    sre_threshold: float = 0.1
    asr_threshold: float = 0.1

    def __post_init__(self):
        if not self.r_min < self.r_init < self.r_max:
            raise ValueError("need r_min < r_init < r_max")
        if self.reward <= 0 or self.penalty_unit <= 0:
            raise ValueError("reward and penalty units must be positive")


@dataclass(frozen=True)
class NeuronFeatureTable:
    deltas: np.ndarray  # (M, E, h+1) per-client per-neuron parameter changes
    magnitudes: np.ndarray  # (M, E)
    accumulated: np.ndarray  # (E,) summed magnitudes
    consensus: np.ndarray  # (E, h+1) mean delta
    inconsistency: np.ndarray  # (E,) in [0, 2]
    score: np.ndarray  # (E,)


@dataclass(frozen=True)
class DetectionResult:
    source_neuron: int  # lower index of the detected pair
    target_neuron: int  # higher index
    features: np.ndarray  # (M, 2(h+1))
    good: tuple[int, ...]
    bad: tuple[int, ...]
    ambiguous: bool
    density_ratio: float | None = None
    gmm: GmmModel | None = field(default=None, repr=False)


def compute_neuron_features(local_models: Sequence[ModelParams], previous: ModelParams) -> NeuronFeatureTable:
    if len(local_models) < 2:
        raise ValueError("neuron-wise analysis needs at least 2 participants")
    E = previous.E
    idx = np.stack([output_neuron_indices(previous, l) for l in range(1, E + 1)])  # (E, h+1)
    base = previous.flat[idx]
    deltas = np.stack([m.flat[idx] - base for m in local_models if m.dims == previous.dims])
    if deltas.shape[0] != len(local_models):
        raise ValueError("local model dimensions do not match the global model")
    mags = np.sqrt(np.einsum("kli,kli->kl", deltas, deltas))
    accumulated = mags.sum(axis=0)
    consensus = deltas.mean(axis=0)
    mu_norm = np.sqrt(np.einsum("li,li->l", consensus, consensus))
    incons = np.zeros(E)
    for l in range(E):
        scale = mags[:, l].max()
        if mu_norm[l] == 0.0 or mu_norm[l] <= ZERO_MEAN_TOL * scale:
            continue
        dots = deltas[:, l, :] @ consensus[l]
        cos = np.ones(len(local_models))  # zero-norm client deltas count as aligned
        nz = mags[:, l] > 0.0
        cos[nz] = np.clip(dots[nz] / (mags[nz, l] * mu_norm[l]), -1.0, 1.0)
        incons[l] = max(0.0, 1.0 - cos.mean())
    score = accumulated * (1.0 + incons)
    return NeuronFeatureTable(deltas, mags, accumulated, consensus, incons, score)


def identify_source_target(table_or_scores) -> tuple[int, int]:
    """Top-2 neurons by combined score, returned in increasing index order."""
    scores = table_or_scores.score if isinstance(table_or_scores, NeuronFeatureTable) else np.asarray(table_or_scores, dtype=np.float64)
    if scores.size < 2:
        raise ValueError("need at least 2 output neurons")
    order = np.argsort(-scores, kind="stable")  # stable: equal scores keep the lower index first
    a, b = int(order[0]) + 1, int(order[1]) + 1
    return min(a, b), max(a, b)


def build_feature_set(table: NeuronFeatureTable, f: int, g: int) -> np.ndarray:
    return np.concatenate([table.deltas[:, f - 1, :], table.deltas[:, g - 1, :]], axis=1)


def cluster_density(points: np.ndarray) -> float:
    """Mean Euclidean distance to the centroid (smaller is denser).

    Scaled by sqrt(n / (n - 1)) so that small clusters are not rated dense just
    because their centroid was fitted to few points; a singleton has no spread
    estimate and is returned as infinitely loose.
    """
    X = np.asarray(points, dtype=np.float64)
    n = X.shape[0]
    if n < 2:
        return float("inf")
    d = np.mean(np.linalg.norm(X - X.mean(axis=0), axis=1))
    return float(d * np.sqrt(n / (n - 1)))


def split_good_bad(points, gmm: GmmModel, participants: Sequence[int]):
    """Flag the denser GMM cluster as poisoned.

    Returns ``(good, bad, ambiguous, density_ratio)``. Ambiguous rounds (no real
    split, density ratio below 1.2, or the denser cluster holding a majority)
    keep every participant as good.
    """
    X = np.asarray(points, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    ids = tuple(int(p) for p in participants)
    if len(ids) != X.shape[0]:
        raise ValueError("one feature row per participant is required")
    if gmm.degenerate:
        return ids, (), True, None
    labels = gmm.hard_labels()
    groups = [np.flatnonzero(labels == c) for c in (0, 1)]
    if min(len(g) for g in groups) == 0:
        return ids, (), True, None
    dens = [cluster_density(X[g]) for g in groups]
    dense = int(np.argmin(dens))  # tie -> component 0
    loose = 1 - dense
    if not np.isfinite(dens[dense]):
        return ids, (), True, None
    ratio = float("inf") if dens[dense] == 0.0 else dens[loose] / dens[dense]
    if ratio < DENSITY_RATIO_MIN or 2 * len(groups[dense]) > len(ids):
        return ids, (), True, ratio
    bad_rows = set(groups[dense].tolist())
    good = tuple(p for r, p in enumerate(ids) if r not in bad_rows)
    bad = tuple(p for r, p in enumerate(ids) if r in bad_rows)
    return good, bad, False, ratio


def detect(local_models: Sequence[ModelParams], previous: ModelParams, participants: Sequence[int],
           rng=None) -> DetectionResult:
    """Full per-round detection: neuron scores, pair, feature set, GMM, split.

    The GMM sees the raw feature rows; the density comparison runs on their
    unit-normalised versions, so tightness means agreement in update direction
    rather than small update size.
    """
    table = compute_neuron_features(local_models, previous)
    f, g = identify_source_target(table)
    U = build_feature_set(table, f, g)
    gmm = gmm_fit(U, rng)
    good, bad, ambiguous, ratio = split_good_bad(unit_rows(U), gmm, participants)
    return DetectionResult(f, g, U, good, bad, ambiguous, ratio, gmm)


def unit_rows(U: np.ndarray) -> np.ndarray:
    """Scale every row to unit length; all-zero rows stay zero."""
    norms = np.linalg.norm(U, axis=1, keepdims=True)
    return np.divide(U, norms, out=np.zeros_like(U), where=norms > 0)


# ---------------------------------------------------------------------------
# global-model validation
# ---------------------------------------------------------------------------

@dataclass
class ValidationState:
    sre_old: float = 0.0
    asr_old: float = 1.0


@dataclass(frozen=True)
class ValidationOutcome:
    model: ModelParams
    reverted: bool
    skipped: bool
    sre: float | None
    asr: float | None


def metric_roles(f: int, g: int) -> tuple[int, int]:
    """Map a detected neuron pair to (source, target): higher index is the source."""
    return max(f, g), min(f, g)


def validate_global(candidate: ModelParams, previous: ModelParams, validation: Dataset,
                    f: int, g: int, policy: RatingPolicy, state: ValidationState) -> ValidationOutcome:
    """Revert to ``previous`` if source recall drops or ASR rises beyond threshold.

    ``state`` is updated in place with the candidate's metrics.
    """
    if len(validation) == 0:
        raise ValueError("validation set is empty")
    source, target = metric_roles(f, g)
    cm = metrics.confusion(validation.labels, predict(candidate, validation), validation.num_classes)
    s_new, a_new = metrics.sre(cm, source), metrics.asr(cm, source, target)
    if s_new is None or a_new is None:
        log.info("validation skipped: no samples of class %d", source)
        return ValidationOutcome(candidate, False, True, None, None)
    revert = (s_new - state.sre_old < -policy.sre_threshold) or (a_new - state.asr_old > policy.asr_threshold)
    state.sre_old, state.asr_old = s_new, a_new
    return ValidationOutcome(previous if revert else candidate, revert, False, s_new, a_new)


# ---------------------------------------------------------------------------
# rating, exclusion and unlearning
# ---------------------------------------------------------------------------

def update_rating(record: ClientRecord, detected_bad: bool, policy: RatingPolicy,
                  round_index: int | None = None, allow_blacklist: bool = True) -> tuple[ClientRecord, bool]:
    """Apply one round's reward or penalty; returns ``(record, newly_blacklisted)``."""
    if detected_bad:
        nc = record.consecutive_detections + 1
        rating = max(record.rating - policy.penalty_unit * nc, policy.r_min)
    else:
        nc = 0
        rating = min(record.rating + policy.reward, policy.r_max)
    out = replace(record, rating=rating, consecutive_detections=nc)
    newly = False
    if allow_blacklist and detected_bad and rating <= policy.r_min and not record.blacklisted:
        out = replace(out, blacklisted=True, blacklisted_round=round_index)
        newly = True
    return out, newly


def unlearn(global_model: ModelParams, record: ClientRecord) -> ModelParams:
    """Subtract the client's accumulated update scaled by its mean good-set size."""
    if record.good_round_count == 0 or record.accumulated_update is None:
        return global_model
    return global_model.with_flat(global_model.flat - record.accumulated_update / record.mean_good_size)
