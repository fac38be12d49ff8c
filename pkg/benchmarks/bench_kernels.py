"""Time the numba kernels against the numpy fallback on experiment-sized inputs.

    python benchmarks/bench_kernels.py [--repeat N] [--samples N]

Both backends are imported in one process: the numpy path is always reachable
through ``numpy_*`` aliases, the numba path only when numba is importable and
FEDTRIDENT_NUMBA is not switched off.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from fedtrident import _kernels
from fedtrident.mathcore import make_rng
from fedtrident.model import init_params


def _best_of(fn, repeat: int) -> float:
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench(repeat: int = 5, samples: int = 600, d: int = 32, h: int = 64, E: int = 6, clients: int = 20):
    rng = make_rng(0)
    p = init_params(d, h, E, rng)
    X = rng.normal(size=(samples, d)) * 8.0
    y = rng.integers(0, E, size=samples)
    # one shuffled index row per local epoch, as local training draws them
    order = np.stack([rng.permutation(samples) for _ in range(3)])
    P = rng.normal(size=(clients, p.flat.size))

    def train(fn):
        def go():
            W = [p.W1.copy(), p.b1.copy(), p.W2.copy(), p.b2.copy()]
            fn(*W, X, y, order, 0.03, 0.5, 64)
            return np.concatenate([w.ravel() for w in W])
        return go

    cases = {
        "local training (3 epochs)": (train(_kernels.numpy_sgd_train), train(_kernels.sgd_train)),
        "logits (test set)": (lambda: _kernels.numpy_logits(p.W1, p.b1, p.W2, p.b2, X),
                              lambda: _kernels.logits(p.W1, p.b1, p.W2, p.b2, X)),
        "pairwise sq. distances": (lambda: _kernels.numpy_pairwise_sq_dists(P),
                                   lambda: _kernels.pairwise_sq_dists(P)),
    }
    rows = []
    for name, (np_fn, fast_fn) in cases.items():
        # the first call compiles, and doubles as the agreement check
        diff = float(np.max(np.abs(np.asarray(fast_fn()) - np.asarray(np_fn()))))
        t_np = _best_of(np_fn, repeat)
        t_fast = _best_of(fast_fn, repeat)
        rows.append((name, t_np, t_fast, diff))
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--samples", type=int, default=600)
    args = ap.parse_args(argv)
    print(f"active backend: {_kernels.backend()}")
    print(f"{'kernel':28s} {'numpy ms':>10s} {_kernels.backend() + ' ms':>10s} {'speedup':>8s} {'max |diff|':>11s}")
    for name, t_np, t_fast, diff in bench(args.repeat, args.samples):
        print(f"{name:28s} {1e3 * t_np:10.3f} {1e3 * t_fast:10.3f} {t_np / t_fast:8.2f}x {diff:11.2e}")


if __name__ == "__main__":
    main()
