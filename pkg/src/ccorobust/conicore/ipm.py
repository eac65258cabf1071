"""Dense homogeneous self-dual primal-dual interior-point method.

Mehrotra predictor-corrector with Nesterov-Todd scaling on the
nonnegative and PSD blocks.  Free blocks are kept as free variables and
enter the Newton system through a saddle-point block, so no splitting
``x = x+ - x-`` is needed.  Infeasibility is read off the embedding:
``tau -> 0`` with a certificate ``b^T y > 0`` (primal infeasible) or
``c^T x < 0`` (dual infeasible).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from ..kernels import schur_psd

log = logging.getLogger(__name__)
REG = 1e-17


@dataclass
class SolverOptions:
    gap_tol: float = 1e-8
    feas_tol: float = 1e-8
    max_iter: int = 200
    step: float = 0.99
    # accept a stalled run whose best iterate meets tolerances loosened by this factor
    stall_factor: float = 100.0
    verbose: bool = False
    callback: object = None  # called with a dict per iteration


@dataclass
class _PsdBlock:
    sl: slice
    n: int
    rows: np.ndarray
    ptr: np.ndarray
    p: np.ndarray
    q: np.ndarray
    v: np.ndarray


@dataclass
class RawResult:
    status: str
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    pobj: float
    dobj: float
    pres: float
    dres: float
    iterations: int
    tau: float
    kappa: float
    inaccurate: bool = False


def _sym(M):
    return 0.5 * (M + M.T)


def _lmin_scaled(lam, D):
    """Max step ``a`` with ``diag(lam) + a*D`` PSD."""
    isq = 1.0 / np.sqrt(lam)
    ev = la.eigvalsh(_sym(D * isq[:, None] * isq[None, :]))
    return math.inf if ev[0] >= 0 else -1.0 / ev[0]


class _Problem:
    def __init__(self, A: sp.csr_matrix, b, c, blocks):
        self.m, self.N = A.shape
        self.A = A
        self.AT = A.T.tocsr()
        self.b = b
        self.c = c
        self.free = []
        self.lp = []
        self.psd = []
        for kind, sl, size in blocks:
            if kind == "free":
                self.free.append(np.arange(sl.start, sl.stop))
            elif kind == "nonneg":
                self.lp.append(np.arange(sl.start, sl.stop))
            else:
                Ab = A[:, sl].tocsr()
                rows = np.flatnonzero(np.diff(Ab.indptr))
                sub = Ab[rows].tocsr()
                sub.sort_indices()
                self.psd.append(_PsdBlock(sl, size, rows, sub.indptr.astype(np.int64),
                                          (sub.indices // size).astype(np.int64),
                                          (sub.indices % size).astype(np.int64),
                                          sub.data.astype(float)))
        self.fidx = np.concatenate(self.free) if self.free else np.zeros(0, np.int64)
        self.lidx = np.concatenate(self.lp) if self.lp else np.zeros(0, np.int64)
        self.Af = A[:, self.fidx].toarray() if self.fidx.size else np.zeros((self.m, 0))
        self.Al = A[:, self.lidx].tocsr()
        self.nu = self.lidx.size + sum(blk.n for blk in self.psd)


def ipm_solve(A: sp.csr_matrix, b: np.ndarray, c: np.ndarray, blocks, opts: SolverOptions) -> RawResult:
    """Solve ``min c^T x, A x = b, x in K`` with ``blocks`` = [(kind, slice, size)]."""
    P = _Problem(A, b, c, blocks)
    m, N = P.m, P.N
    x = np.zeros(N)
    s = np.zeros(N)
    x[P.lidx] = 1.0
    s[P.lidx] = 1.0
    for blk in P.psd:
        eye = np.eye(blk.n).ravel()
        x[blk.sl] = eye
        s[blk.sl] = eye
    y = np.zeros(m)
    tau = kappa = 1.0
    nb = 1.0 + np.linalg.norm(b)
    nc = 1.0 + np.linalg.norm(c)
    nf = P.fidx.size
    cone_mask = np.ones(N, dtype=bool)
    cone_mask[P.fidx] = False

    status = "numerical-failure"
    it = 0
    stall = 0
    pres = dres = math.inf
    best = None         # (merit, x, y, s, tau, kappa, pres, dres)
    for it in range(opts.max_iter + 1):
        Ax = P.A @ x
        ATy = P.AT @ y
        rp = b * tau - Ax
        rd = c * tau - ATy - s
        rg = kappa + c @ x - b @ y
        mu = (x[cone_mask] @ s[cone_mask] + tau * kappa) / (P.nu + 1)
        pobj, dobj = c @ x / tau, b @ y / tau
        pres = np.linalg.norm(rp) / tau / nb
        dres = np.linalg.norm(rd) / tau / nc
        gap = abs(pobj - dobj)
        if opts.callback is not None:
            opts.callback(dict(it=it, x=x / tau, y=y / tau, s=s / tau, pobj=pobj, dobj=dobj,
                               pres=pres, dres=dres, tau=tau, kappa=kappa, mu=mu))
        if opts.verbose:
            log.info("it %3d pobj % .8e dobj % .8e pres %.1e dres %.1e gap %.1e tau %.1e kap %.1e",
                     it, pobj, dobj, pres, dres, gap, tau, kappa)
        if pres <= opts.feas_tol and dres <= opts.feas_tol and gap <= opts.gap_tol * (1 + abs(pobj)):
            status = "optimal"
            break
        merit = max(pres / opts.feas_tol, dres / opts.feas_tol, gap / (opts.gap_tol * (1 + abs(pobj))))
        if np.isfinite(merit) and (best is None or merit < best[0]):
            best = (merit, x.copy(), y.copy(), s.copy(), tau, kappa, pres, dres)
        bty, ctx = b @ y, c @ x
        if bty > 0 and np.linalg.norm(ATy + s) / bty <= opts.feas_tol * nc / nb:
            status = "primal-infeasible"
            break
        if ctx < 0 and np.linalg.norm(Ax) / (-ctx) <= opts.feas_tol * nb / nc:
            status = "dual-infeasible"
            break
        if it == opts.max_iter:
            break

        # -- scaling ------------------------------------------------------
        try:
            scal = _nt_scaling(P, x, s)
        except np.linalg.LinAlgError:
            log.debug("lost positive definiteness at iteration %d", it)
            break
        K = _kkt_matrix(P, scal)
        try:
            lu = la.lu_factor(K, check_finite=False)
        except (ValueError, la.LinAlgError):
            break
        solve = lambda rhs: la.lu_solve(lu, rhs, check_finite=False)

        # second direction (right-hand side independent of eta)
        WcW = _apply_W(P, scal, c)
        r2 = b + P.A @ WcW
        v = _refine(K, solve, np.concatenate([r2, c[P.fidx]]))
        cWc = c @ WcW

        def direction(eta, rs_blocks, rtau):
            rcX = _rcx(P, scal, rs_blocks)
            WrdW = _apply_W(P, scal, eta * rd)
            inner = rcX - WrdW
            r1 = eta * rp - P.A @ inner
            u = _refine(K, solve, np.concatenate([r1, eta * rd[P.fidx]]))
            lhs2 = 2 * b - r2
            den = lhs2 @ v[:m] - c[P.fidx] @ v[m:] + cWc + kappa / tau
            num = eta * rg + c @ inner + rtau / tau - lhs2 @ u[:m] + c[P.fidx] @ u[m:]
            dtau = num / den
            dy = u[:m] + dtau * v[:m]
            dxf = u[m:] + dtau * v[m:]
            ds = eta * rd - P.AT @ dy + c * dtau
            ds[P.fidx] = 0.0
            dx = rcX - _apply_W(P, scal, ds)
            dx[P.fidx] = dxf
            dkappa = (rtau - kappa * dtau) / tau
            return dx, dy, ds, dtau, dkappa

        # predictor
        rs_aff = _rs_affine(P, scal)
        dxa, dya, dsa, dta, dka = direction(1.0, rs_aff, -tau * kappa)
        aa = min(1.0, _max_step(P, scal, x, s, dxa, dsa, tau, kappa, dta, dka))
        sigma = (1.0 - aa) ** 3
        # corrector
        rs_cor = _rs_corrector(P, scal, sigma * mu, dxa, dsa)
        dx, dy, ds, dt, dk = direction(1.0 - sigma, rs_cor, sigma * mu - tau * kappa - dta * dka)
        amax = _max_step(P, scal, x, s, dx, ds, tau, kappa, dt, dk)
        alpha = min(1.0, opts.step * amax)
        if alpha < 1e-10:
            stall += 1
            if stall > 3:
                break
        x = x + alpha * dx
        y = y + alpha * dy
        s = s + alpha * ds
        tau += alpha * dt
        kappa += alpha * dk
        for blk in P.psd:
            n = blk.n
            x[blk.sl] = _sym(x[blk.sl].reshape(n, n)).ravel()
            s[blk.sl] = _sym(s[blk.sl].reshape(n, n)).ravel()

    inaccurate = False
    if status == "numerical-failure" and best is not None and best[0] <= opts.stall_factor:
        _, x, y, s, tau, kappa, pres, dres = best
        status, inaccurate = "optimal", True
        log.debug("stalled; returning best iterate (merit %.1f)", best[0])
    return RawResult(status, x / tau, y / tau, s / tau, c @ x / tau, b @ y / tau,
                     pres, dres, it, tau, kappa, inaccurate)


# ---------------------------------------------------------------------------
# helpers


@dataclass
class _Scaling:
    w_lp: np.ndarray      # sqrt(x/s)
    lam_lp: np.ndarray    # sqrt(x*s)
    G: list               # per PSD block
    Ginv: list
    W: list
    lam: list


def _nt_scaling(P: _Problem, x, s) -> _Scaling:
    xl, sl_ = x[P.lidx], s[P.lidx]
    if np.any(xl <= 0) or np.any(sl_ <= 0):
        raise np.linalg.LinAlgError("nonpositive LP iterate")
    G, Gi, W, L = [], [], [], []
    for blk in P.psd:
        n = blk.n
        X = x[blk.sl].reshape(n, n)
        S = s[blk.sl].reshape(n, n)
        Lx = np.linalg.cholesky(X)
        Ls = np.linalg.cholesky(S)
        U, sv, Vt = np.linalg.svd(Ls.T @ Lx)
        isq = 1.0 / np.sqrt(sv)
        g = (Lx @ Vt.T) * isq[None, :]
        gi = (U.T @ Ls.T) * isq[:, None]
        G.append(g)
        Gi.append(gi)
        W.append(g @ g.T)
        L.append(sv)
    return _Scaling(np.sqrt(xl / sl_), np.sqrt(xl * sl_), G, Gi, W, L)


def _kkt_matrix(P: _Problem, sc: _Scaling) -> np.ndarray:
    m = P.m
    nf = P.fidx.size
    M = np.zeros((m, m))
    if P.lidx.size:
        Al = P.Al.multiply(sc.w_lp[None, :] ** 2).tocsr()
        M += (Al @ P.Al.T).toarray()
    for blk, W in zip(P.psd, sc.W):
        if blk.rows.size == 0:
            continue
        Mb = schur_psd(W, blk.ptr, blk.p, blk.q, blk.v)
        M[np.ix_(blk.rows, blk.rows)] += 0.5 * (Mb + Mb.T)
    reg = REG * (1.0 + np.abs(np.diag(M)).max(initial=0.0))
    K = np.zeros((m + nf, m + nf))
    K[:m, :m] = M + reg * np.eye(m)
    if nf:
        K[:m, m:] = P.Af
        K[m:, :m] = P.Af.T
        K[m:, m:] = -reg * np.eye(nf)
    return K


def _refine(K, solve, rhs, steps=2):
    sol = solve(rhs)
    for _ in range(steps):
        res = rhs - K @ sol
        sol = sol + solve(res)
    return sol


def _apply_W(P: _Problem, sc: _Scaling, vec):
    """Cone-block map ``V -> W V W`` (LP: ``w^2 v``); free part set to 0."""
    out = np.zeros_like(vec)
    if P.lidx.size:
        out[P.lidx] = sc.w_lp ** 2 * vec[P.lidx]
    for blk, W in zip(P.psd, sc.W):
        n = blk.n
        V = vec[blk.sl].reshape(n, n)
        out[blk.sl] = (W @ V @ W).ravel()
    return out


def _rs_affine(P, sc):
    lp = -sc.lam_lp ** 2
    return lp, [-np.diag(l ** 2) for l in sc.lam]


def _scaled(P, sc, dx, ds):
    """Scaled directions ``G^{-1} dX G^{-T}`` and ``G^T dS G`` per block."""
    lp_x = dx[P.lidx] / sc.w_lp if P.lidx.size else np.zeros(0)
    lp_s = ds[P.lidx] * sc.w_lp if P.lidx.size else np.zeros(0)
    px, ps = [], []
    for blk, g, gi in zip(P.psd, sc.G, sc.Ginv):
        n = blk.n
        px.append(_sym(gi @ dx[blk.sl].reshape(n, n) @ gi.T))
        ps.append(_sym(g.T @ ds[blk.sl].reshape(n, n) @ g))
    return lp_x, lp_s, px, ps


def _rs_corrector(P, sc, target, dxa, dsa):
    lx, ls, px, ps = _scaled(P, sc, dxa, dsa)
    lp = target - sc.lam_lp ** 2 - lx * ls
    out = []
    for l, a, b in zip(sc.lam, px, ps):
        out.append(target * np.eye(l.size) - np.diag(l ** 2) - 0.5 * (a @ b + b @ a))
    return lp, out


def _rcx(P, sc, rs):
    """Solve ``lam o D = rs`` per block and return ``G D G^T`` in flat form."""
    lp, mats = rs
    out = np.zeros(P.N)
    if P.lidx.size:
        out[P.lidx] = sc.w_lp * (lp / sc.lam_lp)
    for blk, g, l, R in zip(P.psd, sc.G, sc.lam, mats):
        D = 2.0 * R / (l[:, None] + l[None, :])
        out[blk.sl] = (g @ D @ g.T).ravel()
    return out


def _max_step(P, sc, x, s, dx, ds, tau, kappa, dtau, dkappa):
    a = math.inf
    if P.lidx.size:
        for v, dv in ((x[P.lidx], dx[P.lidx]), (s[P.lidx], ds[P.lidx])):
            neg = dv < 0
            if np.any(neg):
                a = min(a, float(np.min(-v[neg] / dv[neg])))
    _, _, px, ps = _scaled(P, sc, dx, ds)
    for l, a1, a2 in zip(sc.lam, px, ps):
        a = min(a, _lmin_scaled(l, a1), _lmin_scaled(l, a2))
    if dtau < 0:
        a = min(a, -tau / dtau)
    if dkappa < 0:
        a = min(a, -kappa / dkappa)
    return a
