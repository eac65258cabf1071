"""Numba vs numpy timings for the two hot kernels.

Run: python benchmarks/bench_kernels.py --points 200000 --repeats 5

The Schur-complement case uses the moment-matrix structure of a real
relaxation: one row per monomial of degree <= 2k, with an entry at every
(i, j) whose basis monomials sum to it.
"""
import argparse
import time

import numpy as np

from ccorobust import kernels
from ccorobust.polycore import monomial_basis


def timeit(fn, *args, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def moment_structure(r, k):
    half = monomial_basis(r, k).array
    full = monomial_basis(r, 2 * k)
    pos = {tuple(a): i for i, a in enumerate(full.array)}
    ent = [[] for _ in range(len(full.array))]
    for i, a in enumerate(half):
        for j, b in enumerate(half):
            ent[pos[tuple(a + b)]].append((i, j))
    ptr = np.zeros(len(ent) + 1, dtype=np.int64)
    ptr[1:] = np.cumsum([len(e) for e in ent])
    flat = [pq for e in ent for pq in e]
    p = np.array([t[0] for t in flat], dtype=np.int64)
    q = np.array([t[1] for t in flat], dtype=np.int64)
    return len(half), ptr, p, q, np.ones(len(flat))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--points", type=int, default=200_000)
    ap.add_argument("--r", type=int, default=4)
    ap.add_argument("--deg", type=int, default=4)
    ap.add_argument("--k", type=int, default=3)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)

    pts = rng.standard_normal((args.points, args.r))
    exps = monomial_basis(args.r, args.deg).array
    kernels.eval_monomials_numba(pts[:10], exps)  # compile
    t_np, a = timeit(kernels.eval_monomials_numpy, pts, exps, repeats=args.repeats)
    t_nb, b = timeit(kernels.eval_monomials_numba, pts, exps, repeats=args.repeats)
    print(f"monomials  {args.points} x {len(exps)}: numpy {t_np * 1e3:9.2f} ms  numba {t_nb * 1e3:9.2f} ms"
          f"  speedup {t_np / t_nb:5.2f}x  maxdiff {np.max(np.abs(a - b)):.1e}")

    n, ptr, p, q, v = moment_structure(args.r, args.k)
    G = rng.standard_normal((n, n))
    W = G @ G.T / n + np.eye(n)
    kernels.schur_psd_numba(W, ptr, p, q, v)
    t_np, a = timeit(kernels.schur_psd_numpy, W, ptr, p, q, v, repeats=args.repeats)
    t_nb, b = timeit(kernels.schur_psd_numba, W, ptr, p, q, v, repeats=args.repeats)
    print(f"schur      block {n}, rows {len(ptr) - 1}: numpy {t_np * 1e3:9.2f} ms  numba {t_nb * 1e3:9.2f} ms"
          f"  speedup {t_np / t_nb:5.2f}x  maxdiff {np.max(np.abs(a - b)):.1e}")


if __name__ == "__main__":
    main()
