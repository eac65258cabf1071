"""Hot numeric loops, each with a numba and a pure-numpy implementation.

The public names dispatch on :data:`ccorobust._accel.USE_NUMBA`; the
``*_numba`` / ``*_numpy`` variants stay importable so tests and the
benchmark can compare them directly.
"""
import numpy as np

from ._accel import USE_NUMBA, njit

# ---------------------------------------------------------------------------
# monomial evaluation:  out[i, j] = prod_k points[i, k] ** exps[j, k]


def eval_monomials_numpy(points, exps, chunk=200_000):
    points = np.ascontiguousarray(points, dtype=np.float64)
    exps = np.asarray(exps, dtype=np.int64)
    n, m = points.shape[0], exps.shape[0]
    out = np.empty((n, m))
    maxdeg = int(exps.max()) if exps.size else 0
    for s in range(0, n, chunk):
        blk = points[s:s + chunk]
        # powers[p][:, k] = blk[:, k] ** p
        powers = [np.ones_like(blk)]
        for _ in range(maxdeg):
            powers.append(powers[-1] * blk)
        pw = np.stack(powers)  # (maxdeg+1, rows, r)
        res = np.ones((blk.shape[0], m))
        for k in range(exps.shape[1]):
            res *= pw[exps[:, k], :, k].T
        out[s:s + chunk] = res
    return out


@njit
def _eval_monomials_nb(points, exps):
    n, r = points.shape
    m = exps.shape[0]
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            v = 1.0
            for k in range(r):
                e = exps[j, k]
                x = points[i, k]
                while e > 0:
                    v *= x
                    e -= 1
            out[i, j] = v
    return out


def eval_monomials_numba(points, exps):
    return _eval_monomials_nb(np.ascontiguousarray(points, dtype=np.float64),
                              np.ascontiguousarray(exps, dtype=np.int64))


# ---------------------------------------------------------------------------
# Schur complement of one PSD block:
#   M[i, j] = <A_i, W A_j W>
# with A_i given in row-sorted COO form over the full symmetric matrix
# (ptr: CSR-style row pointer over local rows, p/q: entry positions).


def schur_psd_numpy(W, ptr, p, q, v):
    mb = ptr.shape[0] - 1
    rows = np.repeat(np.arange(mb), np.diff(ptr))
    M = np.zeros((mb, mb))
    for j in range(mb):
        s, e = ptr[j], ptr[j + 1]
        if s == e:
            continue
        G = (W[:, p[s:e]] * v[s:e]) @ W[q[s:e], :]
        M[:, j] = np.bincount(rows, weights=v * G[p, q], minlength=mb)
    return M


@njit
def _schur_psd_nb(W, ptr, p, q, v):
    n = W.shape[0]
    mb = ptr.shape[0] - 1
    M = np.zeros((mb, mb))
    G = np.empty((n, n))
    for j in range(mb):
        s, e = ptr[j], ptr[j + 1]
        if s == e:
            continue
        G[:, :] = 0.0
        for t in range(s, e):
            a = v[t]
            pj = p[t]
            qj = q[t]
            for u in range(n):
                wu = a * W[u, pj]
                if wu != 0.0:
                    for w in range(n):
                        G[u, w] += wu * W[qj, w]
        for i in range(mb):
            acc = 0.0
            for t in range(ptr[i], ptr[i + 1]):
                acc += v[t] * G[p[t], q[t]]
            M[i, j] = acc
    return M


def schur_psd_numba(W, ptr, p, q, v):
    return _schur_psd_nb(np.ascontiguousarray(W, dtype=np.float64), ptr, p, q, v)


if USE_NUMBA:
    eval_monomials = eval_monomials_numba
    schur_psd = schur_psd_numba
else:
    eval_monomials = eval_monomials_numpy
    schur_psd = schur_psd_numpy
