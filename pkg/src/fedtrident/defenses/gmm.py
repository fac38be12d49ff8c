"""Two-component diagonal-covariance Gaussian mixture fitted by EM."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .. import _kernels

VAR_FLOOR = 1e-6
TOL = 1e-6
MAX_ITER = 200


@dataclass(frozen=True)
class GmmModel:
    means: np.ndarray  # (2, m)
    variances: np.ndarray  # (2, m)
    weights: np.ndarray  # (2,)
    responsibilities: np.ndarray  # (n, 2)
    log_likelihood: float
    n_iter: int
    degenerate: bool = False

    def hard_labels(self) -> np.ndarray:
        # argmax picks component 0 on exact ties
        return np.argmax(self.responsibilities, axis=1)


def _log_gauss(X, means, variances):
    # (n, 2) log N(x | mean_c, diag(var_c))
    out = np.empty((X.shape[0], means.shape[0]))
    for c in range(means.shape[0]):
        diff = X - means[c]
        out[:, c] = -0.5 * (np.sum(np.log(2.0 * np.pi * variances[c]))
                            + np.sum(diff * diff / variances[c], axis=1))
    return out


def most_distant_pair(X: np.ndarray) -> tuple[int, int, float]:
    D = _kernels.pairwise_sq_dists(np.ascontiguousarray(X, dtype=np.float64))
    flat = int(np.argmax(D))  # first maximum in row-major order
    i, j = divmod(flat, D.shape[0])
    return min(i, j), max(i, j), float(D[i, j])


def gmm_fit(points, rng=None, *, var_floor: float = VAR_FLOOR, tol: float = TOL,
            max_iter: int = MAX_ITER) -> GmmModel:
    """Fit two diagonal Gaussians to ``points`` (shape ``(n, m)`` or ``(n,)``).

    Initialisation is deterministic (the two most distant points), so ``rng`` is
    accepted only for interface symmetry. When fewer than two distinct points
    exist the returned model has ``degenerate=True`` and all points sit in
    component 0.
    """
    X = np.asarray(points, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n, m = X.shape
    if n < 2:
        raise ValueError("gmm_fit needs at least 2 points")
    i, j, dmax = most_distant_pair(X)
    if dmax == 0.0:
        resp = np.zeros((n, 2))
        resp[:, 0] = 1.0
        mean = X.mean(axis=0)
        return GmmModel(np.stack([mean, mean]), np.full((2, m), var_floor), np.array([1.0, 0.0]),
                        resp, float("nan"), 0, degenerate=True)

    means = np.stack([X[i], X[j]])
    variances = np.tile(np.maximum(X.var(axis=0), var_floor), (2, 1))
    weights = np.array([0.5, 0.5])
    prev = -np.inf
    ll = -np.inf
    it = 0
    for it in range(1, max_iter + 1):
        logp = _log_gauss(X, means, variances) + np.log(np.maximum(weights, 1e-300))
        norm = logsumexp(logp, axis=1)
        resp = np.exp(logp - norm[:, None])
        ll = float(norm.sum())
        if abs(ll - prev) < tol:
            break
        prev = ll
        nk = resp.sum(axis=0)
        nk_safe = np.maximum(nk, 1e-12)
        weights = nk / n
        means = (resp.T @ X) / nk_safe[:, None]
        for c in range(2):
            diff = X - means[c]
            variances[c] = np.maximum((resp[:, c] @ (diff * diff)) / nk_safe[c], var_floor)
    logp = _log_gauss(X, means, variances) + np.log(np.maximum(weights, 1e-300))
    norm = logsumexp(logp, axis=1)
    resp = np.exp(logp - norm[:, None])
    return GmmModel(means, variances.copy(), weights, resp, float(norm.sum()), it)
