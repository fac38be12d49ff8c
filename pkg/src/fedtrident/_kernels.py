"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports and ``FEDTRIDENT_NUMBA`` is not set
to ``0``/``false``/``off``. Both paths consume identical inputs (shuffle orders
are drawn by the caller), so switching backends never changes RNG usage; they
may differ in the last bits of floating point because summation order differs.

The numba kernels use explicit loops instead of BLAS calls, which keeps their
output independent of BLAS thread counts.
"""
from __future__ import annotations

import os

import numpy as np

_FLAG = os.environ.get("FEDTRIDENT_NUMBA", "1").strip().lower()

try:  # pragma: no cover - exercised implicitly
    if _FLAG in ("0", "false", "off", "no"):
        raise ImportError("numba disabled by FEDTRIDENT_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False


def backend() -> str:
    return "numba" if HAVE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# numpy reference implementations
# ---------------------------------------------------------------------------

def _np_batch_grad(W1, b1, W2, b2, Xb, yb):
    """Mean cross-entropy gradient over one batch (labels 0-based)."""
    B = Xb.shape[0]
    pre = Xb @ W1 + b1
    H = np.maximum(pre, 0.0)
    Z = H @ W2.T + b2
    Z = Z - Z.max(axis=1, keepdims=True)
    P = np.exp(Z)
    P /= P.sum(axis=1, keepdims=True)
    P[np.arange(B), yb] -= 1.0
    D = P / B
    gW2 = D.T @ H
    gb2 = D.sum(axis=0)
    dH = (D @ W2) * (pre > 0.0)
    gW1 = Xb.T @ dH
    gb1 = dH.sum(axis=0)
    return gW1, gb1, gW2, gb2


def _np_sgd_train(W1, b1, W2, b2, X, y, order, lr, momentum, batch_size):
    vW1 = np.zeros_like(W1)
    vb1 = np.zeros_like(b1)
    vW2 = np.zeros_like(W2)
    vb2 = np.zeros_like(b2)
    n = X.shape[0]
    for epoch in range(order.shape[0]):
        perm = order[epoch]
        for start in range(0, n, batch_size):
            idx = perm[start:start + batch_size]
            gW1, gb1, gW2, gb2 = _np_batch_grad(W1, b1, W2, b2, X[idx], y[idx])
            vW1 *= momentum
            vW1 += gW1
            vb1 *= momentum
            vb1 += gb1
            vW2 *= momentum
            vW2 += gW2
            vb2 *= momentum
            vb2 += gb2
            W1 -= lr * vW1
            b1 -= lr * vb1
            W2 -= lr * vW2
            b2 -= lr * vb2


def _np_logits(W1, b1, W2, b2, X):
    return np.maximum(X @ W1 + b1, 0.0) @ W2.T + b2


def _np_pairwise_sq_dists(P):
    sq = np.einsum("ij,ij->i", P, P)
    D = sq[:, None] + sq[None, :] - 2.0 * (P @ P.T)
    np.maximum(D, 0.0, out=D)
    np.fill_diagonal(D, 0.0)
    return D


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True, nogil=True)
    def _nb_sgd_train(W1, b1, W2, b2, X, y, order, lr, momentum, batch_size):
        d, h = W1.shape
        E = W2.shape[0]
        n = X.shape[0]
        vW1 = np.zeros_like(W1)
        vb1 = np.zeros_like(b1)
        vW2 = np.zeros_like(W2)
        vb2 = np.zeros_like(b2)
        gW1 = np.zeros_like(W1)
        gb1 = np.zeros_like(b1)
        gW2 = np.zeros_like(W2)
        gb2 = np.zeros_like(b2)
        pre = np.empty(h)
        hid = np.empty(h)
        z = np.empty(E)
        dh = np.empty(h)
        for epoch in range(order.shape[0]):
            start = 0
            while start < n:
                stop = min(start + batch_size, n)
                B = stop - start
                gW1[:, :] = 0.0
                gb1[:] = 0.0
                gW2[:, :] = 0.0
                gb2[:] = 0.0
                for s in range(start, stop):
                    i = order[epoch, s]
                    # k outer keeps W1 reads contiguous; each pre[j] still sums in k order
                    for j in range(h):
                        pre[j] = b1[j]
                    for k in range(d):
                        xk = X[i, k]
                        for j in range(h):
                            pre[j] += xk * W1[k, j]
                    for j in range(h):
                        hid[j] = pre[j] if pre[j] > 0.0 else 0.0
                    zmax = -np.inf
                    for c in range(E):
                        acc = b2[c]
                        for j in range(h):
                            acc += W2[c, j] * hid[j]
                        z[c] = acc
                        if acc > zmax:
                            zmax = acc
                    tot = 0.0
                    for c in range(E):
                        z[c] = np.exp(z[c] - zmax)
                        tot += z[c]
                    for c in range(E):
                        z[c] = z[c] / tot
                    z[y[i]] -= 1.0
                    for c in range(E):
                        z[c] = z[c] / B
                    for j in range(h):
                        dh[j] = 0.0
                    for c in range(E):
                        dc = z[c]
                        gb2[c] += dc
                        for j in range(h):
                            gW2[c, j] += dc * hid[j]
                            dh[j] += dc * W2[c, j]
                    for j in range(h):
                        if pre[j] > 0.0:
                            gb1[j] += dh[j]
                        else:
                            dh[j] = 0.0
                    for k in range(d):
                        xk = X[i, k]
                        for j in range(h):
                            gW1[k, j] += xk * dh[j]
                for k in range(d):
                    for j in range(h):
                        vW1[k, j] = momentum * vW1[k, j] + gW1[k, j]
                        W1[k, j] -= lr * vW1[k, j]
                for j in range(h):
                    vb1[j] = momentum * vb1[j] + gb1[j]
                    b1[j] -= lr * vb1[j]
                for c in range(E):
                    for j in range(h):
                        vW2[c, j] = momentum * vW2[c, j] + gW2[c, j]
                        W2[c, j] -= lr * vW2[c, j]
                    vb2[c] = momentum * vb2[c] + gb2[c]
                    b2[c] -= lr * vb2[c]
                start = stop

    @njit(cache=True, nogil=True)
    def _nb_logits(W1, b1, W2, b2, X):
        d, h = W1.shape
        E = W2.shape[0]
        n = X.shape[0]
        out = np.empty((n, E))
        hid = np.empty(h)
        for i in range(n):
            for j in range(h):
                hid[j] = b1[j]
            for k in range(d):
                xk = X[i, k]
                for j in range(h):
                    hid[j] += xk * W1[k, j]
            for j in range(h):
                if hid[j] < 0.0:
                    hid[j] = 0.0
            for c in range(E):
                acc = b2[c]
                for j in range(h):
                    acc += W2[c, j] * hid[j]
                out[i, c] = acc
        return out

    @njit(cache=True, nogil=True)
    def _nb_pairwise_sq_dists(P):
        n, m = P.shape
        D = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                acc = 0.0
                for k in range(m):
                    diff = P[i, k] - P[j, k]
                    acc += diff * diff
                D[i, j] = acc
                D[j, i] = acc
        return D

    sgd_train = _nb_sgd_train
    logits = _nb_logits
    pairwise_sq_dists = _nb_pairwise_sq_dists
else:
    sgd_train = _np_sgd_train
    logits = _np_logits
    pairwise_sq_dists = _np_pairwise_sq_dists

numpy_sgd_train = _np_sgd_train
numpy_logits = _np_logits
numpy_pairwise_sq_dists = _np_pairwise_sq_dists
batch_grad = _np_batch_grad
