"""Seeded randomness and small numeric helpers shared by every module."""
from __future__ import annotations

from typing import Iterable, Sequence, Union

import numpy as np

StreamId = Union[int, Sequence[int]]

# Stable stream ids per purpose; a master seed fans out to these so results
# do not depend on the execution order of consumers.
STREAM_DATA_TRAIN = 1
STREAM_DATA_TEST = 2
STREAM_PARTITION = 3
STREAM_ATTACKERS = 4
STREAM_INIT = 5
STREAM_SELECTION = 6
STREAM_CLIENT = 7
STREAM_DEFENSE = 8
STREAM_SPLIT = 9


def make_rng(seed: int, stream: StreamId = 0) -> np.random.Generator:
    """Return an independent PCG64 generator for ``(seed, stream)``.

    ``stream`` may be a single id or a tuple such as ``(STREAM_CLIENT, k, t)``.
    The same pair always produces the same draw sequence.
    """
    if isinstance(stream, (int, np.integer)):
        key: tuple = (int(stream),)
    else:
        key = tuple(int(s) for s in stream)
    if seed < 0 or any(s < 0 for s in key):
        raise ValueError("seed and stream ids must be non-negative")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


def _as_vector(v: Iterable[float]) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64).ravel()
    return arr


def l2_norm(v) -> float:
    arr = _as_vector(v)
    if arr.size == 0:
        raise ValueError("l2_norm of an empty vector")
    return float(np.sqrt(np.dot(arr, arr)))


def cosine_similarity(a, b) -> float | None:
    """Cosine of the angle between ``a`` and ``b``.

    Returns ``None`` when either operand has zero norm; the caller decides
    what that means.
    """
    x, y = _as_vector(a), _as_vector(b)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.size} vs {y.size}")
    nx, ny = np.sqrt(np.dot(x, x)), np.sqrt(np.dot(y, y))
    if nx == 0.0 or ny == 0.0:
        return None
    c = float(np.dot(x, y) / (nx * ny))
    return min(1.0, max(-1.0, c))


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if z.size == 0:
        raise ValueError("softmax of an empty vector")
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - np.max(z, axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def sample_dirichlet(alpha: float, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Symmetric Dirichlet draw via normalised Gamma(alpha) variates."""
    if not alpha > 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    if dim == 1:
        return np.ones(1)
    g = rng.standard_gamma(alpha, size=dim)
    total = g.sum()
    if total <= 0.0:
        # every draw underflowed (tiny alpha): the mass sits on one vertex
        out = np.zeros(dim)
        out[int(rng.integers(dim))] = 1.0
        return out
    return g / total


def sample_gaussian(mean: float, stddev: float, rng: np.random.Generator, size=None):
    if stddev < 0:
        raise ValueError(f"stddev must be >= 0, got {stddev}")
    if stddev == 0:
        return mean if size is None else np.full(size, float(mean))
    draw = rng.normal(mean, stddev, size=size)
    return float(draw) if size is None else draw
