"""One-hidden-layer ReLU MLP with softmax output, trained by heavy-ball SGD.

Parameters live in one flat float64 vector laid out as
``[W1 (d*h), b1 (h), W2 (E*h), b2 (E)]`` with ``W1`` of shape ``(d, h)`` and
``W2`` of shape ``(E, h)``; row ``l`` of ``W2`` together with ``b2[l]`` are the
``h + 1`` parameters owned by output neuron ``l``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .data import Dataset
from .mathcore import log_softmax


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.03
    momentum: float = 0.5
    batch_size: int = 64
    local_epochs: int = 3

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size < 1 or self.local_epochs < 0:
            raise ValueError("batch_size must be >= 1 and local_epochs >= 0")


class ModelParams:
    """Immutable flat parameter vector with shaped read-only views."""

    __slots__ = ("d", "h", "E", "flat")

    def __init__(self, d: int, h: int, E: int, flat=None):
        self.d, self.h, self.E = int(d), int(h), int(E)
        n = self.size_for(d, h, E)
        if flat is None:
            arr = np.zeros(n)
        else:
            arr = np.array(flat, dtype=np.float64, copy=True).ravel()
            if arr.size != n:
                raise ValueError(f"expected {n} parameters for (d={d}, h={h}, E={E}), got {arr.size}")
        arr.setflags(write=False)
        self.flat = arr

    @staticmethod
    def size_for(d: int, h: int, E: int) -> int:
        return d * h + h + E * h + E

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.d, self.h, self.E

    def _offsets(self):
        d, h, E = self.dims
        a = d * h
        b = a + h
        c = b + E * h
        return a, b, c

    @property
    def W1(self) -> np.ndarray:
        a, _, _ = self._offsets()
        return self.flat[:a].reshape(self.d, self.h)

    @property
    def b1(self) -> np.ndarray:
        a, b, _ = self._offsets()
        return self.flat[a:b]

    @property
    def W2(self) -> np.ndarray:
        _, b, c = self._offsets()
        return self.flat[b:c].reshape(self.E, self.h)

    @property
    def b2(self) -> np.ndarray:
        _, _, c = self._offsets()
        return self.flat[c:]

    @classmethod
    def from_parts(cls, W1, b1, W2, b2) -> "ModelParams":
        W1 = np.asarray(W1, dtype=np.float64)
        W2 = np.asarray(W2, dtype=np.float64)
        d, h = W1.shape
        E = W2.shape[0]
        if W2.shape != (E, h) or np.shape(b1) != (h,) or np.shape(b2) != (E,):
            raise ValueError("inconsistent parameter shapes")
        flat = np.concatenate([W1.ravel(), np.ravel(b1), W2.ravel(), np.ravel(b2)])
        return cls(d, h, E, flat)

    def with_flat(self, flat) -> "ModelParams":
        return ModelParams(self.d, self.h, self.E, flat)

    def __repr__(self) -> str:
        return f"ModelParams(d={self.d}, h={self.h}, E={self.E})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, ModelParams):
            return NotImplemented
        return self.dims == other.dims and np.array_equal(self.flat, other.flat)

    __hash__ = None  # type: ignore[assignment]

    # -- binary format: (d, h, E) as little-endian uint32, then float64 LE --

    def to_bytes(self) -> bytes:
        return struct.pack("<III", *self.dims) + self.flat.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, buf: bytes) -> "ModelParams":
        if len(buf) < 12:
            raise ValueError("buffer too short for a ModelParams header")
        d, h, E = struct.unpack_from("<III", buf, 0)
        n = cls.size_for(d, h, E)
        body = buf[12:]
        if len(body) != 8 * n:
            raise ValueError(f"expected {8 * n} payload bytes, got {len(body)}")
        return cls(d, h, E, np.frombuffer(body, dtype="<f8"))


def init_params(d: int, h: int, E: int, rng: np.random.Generator) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    if min(d, h, E) < 1:
        raise ValueError("all dimensions must be >= 1")
    W1 = rng.uniform(-1.0, 1.0, size=(d, h)) / np.sqrt(d)
    W2 = rng.uniform(-1.0, 1.0, size=(E, h)) / np.sqrt(h)
    return ModelParams.from_parts(W1, np.zeros(h), W2, np.zeros(E))


def _check_features(params: ModelParams, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != params.d:
        raise ValueError(f"feature dimension {X.shape[1]} does not match model d={params.d}")
    return np.ascontiguousarray(X)


def forward(params: ModelParams, features) -> np.ndarray:
    """Logits for one sample (1-D input) or a batch (2-D input)."""
    single = np.ndim(features) == 1
    X = _check_features(params, features)
    Z = _kernels.logits(params.W1, params.b1, params.W2, params.b2, X)
    return Z[0] if single else Z


def predict(params: ModelParams, dataset: Dataset) -> np.ndarray:
    """1-based argmax predictions; ``np.argmax`` already breaks ties low."""
    if len(dataset) == 0:
        return np.zeros(0, dtype=np.int64)
    Z = forward(params, dataset.features)
    return np.argmax(Z, axis=1).astype(np.int64) + 1


def mean_loss(params: ModelParams, dataset: Dataset) -> float:
    Z = forward(params, dataset.features)
    lp = log_softmax(Z)
    return float(-lp[np.arange(len(dataset)), dataset.labels - 1].mean())


def loss_and_grad(params: ModelParams, X, y) -> tuple[float, ModelParams]:
    """Mean cross-entropy and its gradient; ``y`` holds 1-based labels."""
    X = _check_features(params, X)
    y0 = np.asarray(y, dtype=np.int64) - 1
    lp = log_softmax(_kernels.numpy_logits(params.W1, params.b1, params.W2, params.b2, X))
    loss = float(-lp[np.arange(len(y0)), y0].mean())
    g = _kernels.batch_grad(params.W1, params.b1, params.W2, params.b2, X, y0)
    return loss, ModelParams.from_parts(*g)


def train_local(params: ModelParams, dataset: Dataset, config: TrainConfig,
                rng: np.random.Generator) -> ModelParams:
    """Shuffled mini-batch SGD with heavy-ball momentum; returns fresh params."""
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    if dataset.feature_dim != params.d or dataset.num_classes != params.E:
        raise ValueError("dataset dimensions do not match the model")
    # orders are drawn up front so both kernel backends consume the RNG identically
    order = np.empty((config.local_epochs, n), dtype=np.int64)
    for e in range(config.local_epochs):
        order[e] = rng.permutation(n)
    if config.learning_rate == 0 or config.local_epochs == 0:
        return params.with_flat(params.flat)
    W1 = params.W1.copy()
    b1 = params.b1.copy()
    W2 = params.W2.copy()
    b2 = params.b2.copy()
    _kernels.sgd_train(W1, b1, W2, b2, dataset.features, dataset.labels - 1, order,
                       float(config.learning_rate), float(config.momentum), int(config.batch_size))
    return ModelParams.from_parts(W1, b1, W2, b2)


def _check_same(x: ModelParams, y: ModelParams):
    if x.dims != y.dims:
        raise ValueError(f"dimension mismatch: {x.dims} vs {y.dims}")


def param_axpy(a: float, x: ModelParams, y: ModelParams) -> ModelParams:
    _check_same(x, y)
    return y.with_flat(a * x.flat + y.flat)


def param_sub(x: ModelParams, y: ModelParams) -> np.ndarray:
    """Flat ``x - y``."""
    _check_same(x, y)
    return x.flat - y.flat


def output_neuron_indices(params: ModelParams, neuron: int) -> np.ndarray:
    """Flat indices of the ``h + 1`` parameters feeding output neuron ``neuron`` (1-based)."""
    d, h, E = params.dims
    if not 1 <= neuron <= E:
        raise ValueError(f"neuron must lie in 1..{E}, got {neuron}")
    row = d * h + h + (neuron - 1) * h
    bias = d * h + h + E * h + (neuron - 1)
    return np.concatenate([np.arange(row, row + h), [bias]])


def output_neuron_slice(params: ModelParams, neuron: int) -> np.ndarray:
    return params.flat[output_neuron_indices(params, neuron)]  # fancy indexing copies


def output_layer_indices(params: ModelParams) -> np.ndarray:
    d, h, E = params.dims
    start = d * h + h
    return np.arange(start, start + E * h + E)
