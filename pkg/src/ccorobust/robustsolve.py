"""Robust approximations of an individual chance constraint on an ellipsoid.

Two paths are provided:

* linear objective over a semidefinite-representable decision set, solved
  by the Moment-SOS hierarchy with flat-truncation stopping
  (:func:`solve_linear_cco`);
* SOS-convex objective and SOS-concave polynomial constraints, lifted to
  moment variables ``w`` with ``x = pi(w)`` (:func:`solve_sosconvex_cco`).

Sign conventions: the coefficient-matching rows of the quadratic-module
constraint carry multipliers ``y_row``; the moment vector of the dual is
``z = -y_row``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .certkit import OrderTooSmall, encode_poly_membership, encode_qmod_membership, encode_sos_in_x
from .conicore import ConicProgram, PrimalDualSolution, SolverOptions, solve
from .kernels import eval_monomials
from .momentkit import Tms, flat_truncation, localizing_map, moment_matrix
from .polycore import DimensionError, Poly, basis_size, monomial_basis, substitution_matrix

log = logging.getLogger(__name__)


class NotPositiveDefinite(ValueError):
    pass


class SolverFailure(RuntimeError):
    """Raised when the conic solver fails; ``trace`` holds the orders done so far."""

    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace or []


# ---------------------------------------------------------------------------
# problem data


@dataclass
class PerturbedConstraint:
    """``h(x, xi) = (A x + b)^T [xi]_d``."""

    A: np.ndarray
    b: np.ndarray
    r: int

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.b = np.asarray(self.b, dtype=float).ravel()
        if self.A.shape[0] != self.b.shape[0]:
            raise DimensionError("A and b row counts differ")
        d = 0
        while basis_size(self.r, d) < self.A.shape[0]:
            d += 1
        if basis_size(self.r, d) != self.A.shape[0]:
            raise DimensionError(f"{self.A.shape[0]} rows is not a basis size for r={self.r}")
        # trim to the highest degree with a nonzero row
        nz = np.flatnonzero(np.any(self.A != 0, axis=1) | (self.b != 0))
        top = max((sum(monomial_basis(self.r, d).order[i]) for i in nz), default=0)
        s = basis_size(self.r, top)
        self.A = self.A[:s].copy()
        self.b = self.b[:s].copy()

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def d(self) -> int:
        d = 0
        while basis_size(self.r, d) < self.A.shape[0]:
            d += 1
        return d

    @classmethod
    def from_terms(cls, terms, r: int, n: int) -> "PerturbedConstraint":
        """Build from ``(a, b, alpha)`` triples: ``h = sum (a^T x + b) xi^alpha``.

        ``a`` may be ``None`` for a term that does not involve ``x``.
        """
        terms = list(terms)
        d = max((sum(alpha) for _, _, alpha in terms), default=0)
        basis = monomial_basis(r, d)
        A = np.zeros((len(basis), n))
        b = np.zeros(len(basis))
        for a, bj, alpha in terms:
            if len(alpha) != r:
                raise DimensionError(f"exponent {tuple(alpha)} has length {len(alpha)}, expected {r}")
            i = basis.index_of(alpha)
            if a is not None:
                a = np.asarray(a, dtype=float).ravel()
                if a.shape[0] != n:
                    raise DimensionError(f"term coefficient has length {a.shape[0]}, expected {n}")
                A[i] += a
            b[i] += bj
        return cls(A, b, r)

    def coeffs(self, x) -> np.ndarray:
        return self.A @ np.asarray(x, dtype=float) + self.b

    def poly_in_xi(self, x) -> Poly:
        return Poly.from_coeffs(self.r, self.coeffs(x), self.d)

    def evaluate(self, x, points) -> np.ndarray:
        """``h(x, xi_j)`` for each row of ``points``."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        V = eval_monomials(pts, monomial_basis(self.r, self.d).array)
        return V @ self.coeffs(x)


@dataclass
class UncertaintySet:
    """``U = {xi : Gamma - (xi - mu)^T Lambda^{-1} (xi - mu) >= 0}``."""

    Gamma: float
    mu: np.ndarray
    Lambda: np.ndarray
    pd_tol: float = 1e-12

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float).ravel()
        self.Lambda = np.atleast_2d(np.asarray(self.Lambda, dtype=float))
        r = self.mu.shape[0]
        if self.Lambda.shape != (r, r):
            raise DimensionError(f"Lambda must be {r}x{r}")
        if not np.allclose(self.Lambda, self.Lambda.T, rtol=0, atol=1e-12 * max(1.0, np.abs(self.Lambda).max())):
            raise NotPositiveDefinite("Lambda is not symmetric")
        self.Lambda = 0.5 * (self.Lambda + self.Lambda.T)
        if np.linalg.eigvalsh(self.Lambda)[0] <= self.pd_tol:
            raise NotPositiveDefinite("Lambda is not positive definite")
        if not self.Gamma > 0:
            raise ValueError("Gamma must be positive")
        self._chol = np.linalg.cholesky(self.Lambda)

    @property
    def r(self) -> int:
        return self.mu.shape[0]

    @property
    def g(self) -> Poly:
        P = np.linalg.inv(self.Lambda)
        P = 0.5 * (P + P.T)
        r = self.r
        terms: Dict[tuple, float] = {(0,) * r: float(self.Gamma - self.mu @ P @ self.mu)}
        lin = 2 * P @ self.mu
        for i in range(r):
            e = [0] * r
            e[i] = 1
            terms[tuple(e)] = terms.get(tuple(e), 0.0) + float(lin[i])
            for j in range(i, r):
                e = [0] * r
                e[i] += 1
                e[j] += 1
                c = -P[i, i] if i == j else -2 * P[i, j]
                terms[tuple(e)] = terms.get(tuple(e), 0.0) + float(c)
        return Poly(r, terms)

    def mahalanobis(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float)) - self.mu
        from scipy.linalg import solve_triangular
        w = solve_triangular(self._chol, pts.T, lower=True)
        return np.sum(w * w, axis=0)

    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        return self.mahalanobis(points) <= self.Gamma + tol

    def sample_inside(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Uniform draws from the ellipsoid."""
        r = self.r
        u = rng.standard_normal((n, r))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        rad = rng.random(n) ** (1.0 / r)
        eta = u * rad[:, None] * math.sqrt(self.Gamma)
        return self.mu + eta @ self._chol.T

    def with_gamma(self, Gamma: float) -> "UncertaintySet":
        return UncertaintySet(Gamma, self.mu, self.Lambda, self.pd_tol)


@dataclass
class DecisionSet:
    """``X`` given by ``a^T x >= c``, ``a^T x = c``, ``F0 + sum x_j F_j >= 0`` and ``u_i(x) >= 0``."""

    linear_ineqs: List[Tuple[np.ndarray, float]] = field(default_factory=list)
    linear_eqs: List[Tuple[np.ndarray, float]] = field(default_factory=list)
    lmi_blocks: List[Tuple[np.ndarray, List[np.ndarray]]] = field(default_factory=list)
    poly_ineqs: List[Poly] = field(default_factory=list)

    def _mats(self, rows, n):
        if not rows:
            return np.zeros((0, n)), np.zeros(0)
        G = np.array([np.asarray(a, dtype=float).ravel() for a, _ in rows])
        h = np.array([float(c) for _, c in rows])
        if G.shape[1] != n:
            raise DimensionError(f"linear row of length {G.shape[1]}, expected {n}")
        return G, h

    def ineq_matrix(self, n):
        return self._mats(self.linear_ineqs, n)

    def eq_matrix(self, n):
        return self._mats(self.linear_eqs, n)

    def check(self, n: int) -> None:
        self.ineq_matrix(n)
        self.eq_matrix(n)
        for F0, Fs in self.lmi_blocks:
            F0 = np.asarray(F0)
            if len(Fs) != n:
                raise DimensionError(f"LMI has {len(Fs)} coefficient matrices, expected {n}")
            for F in [F0] + list(Fs):
                F = np.asarray(F)
                if F.shape != F0.shape or F.shape[0] != F.shape[1]:
                    raise DimensionError("LMI matrices must be square and equally sized")
                if not np.allclose(F, F.T):
                    raise DimensionError("LMI matrices must be symmetric")
        for u in self.poly_ineqs:
            if u.r != n:
                raise DimensionError(f"polynomial constraint in {u.r} variables, expected {n}")

    def contains(self, x, tol: float = 1e-6) -> bool:
        x = np.asarray(x, dtype=float)
        n = x.shape[0]
        G, h = self.ineq_matrix(n)
        E, e = self.eq_matrix(n)
        if np.any(G @ x < h - tol) or np.any(np.abs(E @ x - e) > tol):
            return False
        for F0, Fs in self.lmi_blocks:
            M = np.asarray(F0, dtype=float) + sum(xj * np.asarray(F, dtype=float) for xj, F in zip(x, Fs))
            if np.linalg.eigvalsh(M)[0] < -tol:
                return False
        return all(u(x) >= -tol for u in self.poly_ineqs)


def relaxation_order_floor(d: int) -> int:
    if d < 0:
        raise ValueError("degree must be nonnegative")
    return max(math.ceil(d / 2), 1)


# ---------------------------------------------------------------------------
# program assembly


def _attach_decision_set(prog: ConicProgram, X: DecisionSet, n: int, xblock: str, xidx: np.ndarray) -> None:
    """Add ``X``'s linear and LMI parts for ``x`` stored at ``prog[xblock][xidx]``."""
    G, h = X.ineq_matrix(n)
    if G.shape[0]:
        rows = prog.add_rows("lin", h)
        prog.add_block("slack", "nonneg", G.shape[0])
        rr, cc = np.nonzero(G)
        prog.add_coeffs(xblock, rows[rr], xidx[cc], vals=G[rr, cc])
        prog.add_coeffs("slack", rows, np.arange(G.shape[0]), vals=-1.0)
    E, e = X.eq_matrix(n)
    if E.shape[0]:
        rows = prog.add_rows("eq", e)
        rr, cc = np.nonzero(E)
        prog.add_coeffs(xblock, rows[rr], xidx[cc], vals=E[rr, cc])
    for t, (F0, Fs) in enumerate(X.lmi_blocks):
        F0 = np.asarray(F0, dtype=float)
        m = F0.shape[0]
        iu, ju = np.triu_indices(m)
        name = f"lmi{t}"
        rows = prog.add_rows(name, F0[iu, ju], list(zip(iu.tolist(), ju.tolist())))
        prog.add_block(name, "psd", m)
        # Z_ij - sum_k x_k F_k[i,j] = F0[i,j]; a position value counts X_ij once
        prog.add_coeffs(name, rows, iu, ju, 1.0)
        for kk, F in enumerate(Fs):
            F = np.asarray(F, dtype=float)
            v = F[iu, ju]
            nz = np.flatnonzero(v)
            if nz.size:
                prog.add_coeffs(xblock, rows[nz], np.full(nz.size, xidx[kk]), vals=-v[nz])


def _check_order(pc: PerturbedConstraint, U: UncertaintySet, k: int) -> None:
    if pc.r != U.r:
        raise DimensionError(f"constraint has r={pc.r}, uncertainty set r={U.r}")
    if k < relaxation_order_floor(pc.d):
        raise OrderTooSmall(f"k={k} is below k0={relaxation_order_floor(pc.d)}")


def build_primal_relaxation(obj_c, pc: PerturbedConstraint, X: DecisionSet, U: UncertaintySet,
                            k: int) -> ConicProgram:
    """``min c^T x`` s.t. ``(Ax+b)^T[xi]_d in Q(g)_{2k}``, ``x in X``."""
    _check_order(pc, U, k)
    if X.poly_ineqs:
        raise ValueError("polynomial constraints on x need the SOS-convex path")
    n = pc.n
    X.check(n)
    c = np.asarray(obj_c, dtype=float).ravel()
    if c.shape[0] != n:
        raise DimensionError(f"objective has length {c.shape[0]}, expected {n}")
    prog = ConicProgram(f"primal-k{k}")
    prog.add_block("x", "free", n)
    prog.add_objective("x", np.arange(n), vals=c)
    enc = encode_qmod_membership(pc.A, pc.b, U.g, k)
    enc.attach(prog, {"x": ("x", np.arange(n))})
    _attach_decision_set(prog, X, n, "x", np.arange(n))
    prog.meta = {"enc": enc}
    return prog


def _attach_moment_cone(prog: ConicProgram, r: int, k: int, gs: Sequence[Poly], zblock: str) -> None:
    """``M_k[z] >= 0`` and ``L_g[z] >= 0`` through PSD blocks tied to ``z``."""
    for t, g in enumerate([Poly.constant(r, 1)] + list(gs)):
        side, i, j, yidx, coef = localizing_map(g, k)
        iu, ju = np.triu_indices(side)
        name = f"M{t}"
        rows = prog.add_rows(name, np.zeros(iu.shape[0]))
        prog.add_block(name, "psd", side)
        prog.add_coeffs(name, rows, iu, ju, 1.0)
        pos = {(a, b): q for q, (a, b) in enumerate(zip(iu.tolist(), ju.tolist()))}
        ridx = np.array([pos[(a, b)] for a, b in zip(i.tolist(), j.tolist())], dtype=np.int64)
        prog.add_coeffs(zblock, rows[ridx], yidx, vals=-coef)


def build_dual_relaxation(obj_c, pc: PerturbedConstraint, X: DecisionSet, U: UncertaintySet,
                          k: int) -> ConicProgram:
    """The moment relaxation, written as a minimization of ``-f_k^mom``.

    Variables: ``z`` (free tms of degree ``2k``), multipliers ``lam >= 0`` for
    inequalities, ``nu`` for equalities, ``Z_t >= 0`` for each LMI.  The
    constraint ``c - A^T y in X^*`` with ``y = z|_d`` reads
    ``A^T y + G^T lam + E^T nu + (<Z, F_j>)_j = c``.
    """
    _check_order(pc, U, k)
    if X.poly_ineqs:
        raise ValueError("polynomial constraints on x need the SOS-convex path")
    n, r = pc.n, pc.r
    X.check(n)
    c = np.asarray(obj_c, dtype=float).ravel()
    prog = ConicProgram(f"dual-k{k}")
    N = basis_size(r, 2 * k)
    prog.add_block("z", "free", N)
    s = pc.A.shape[0]
    prog.add_objective("z", np.arange(s), vals=pc.b)
    rows = prog.add_rows("cx", c)
    rr, cc = np.nonzero(pc.A)
    prog.add_coeffs("z", rows[cc], rr, vals=pc.A[rr, cc])
    G, h = X.ineq_matrix(n)
    if G.shape[0]:
        prog.add_block("lam", "nonneg", G.shape[0])
        prog.add_objective("lam", np.arange(G.shape[0]), vals=-h)
        a, bcol = np.nonzero(G)
        prog.add_coeffs("lam", rows[bcol], a, vals=G[a, bcol])
    E, e = X.eq_matrix(n)
    if E.shape[0]:
        prog.add_block("nu", "free", E.shape[0])
        prog.add_objective("nu", np.arange(E.shape[0]), vals=-e)
        a, bcol = np.nonzero(E)
        prog.add_coeffs("nu", rows[bcol], a, vals=E[a, bcol])
    for t, (F0, Fs) in enumerate(X.lmi_blocks):
        F0 = np.asarray(F0, dtype=float)
        m = F0.shape[0]
        name = f"Z{t}"
        prog.add_block(name, "psd", m)
        iu, ju = np.triu_indices(m)
        w = np.where(iu == ju, 1.0, 2.0)
        prog.add_objective(name, iu, ju, F0[iu, ju] * w)
        for jj, F in enumerate(Fs):
            F = np.asarray(F, dtype=float)
            v = F[iu, ju] * w
            nz = np.flatnonzero(v)
            if nz.size:
                prog.add_coeffs(name, np.full(nz.size, rows[jj]), iu[nz], ju[nz], v[nz])
    _attach_moment_cone(prog, r, k, [U.g], "z")
    return prog


def _sos_degree(f: Poly, us: Sequence[Poly]) -> int:
    return max(1, math.ceil(max([f.degree] + [u.degree for u in us]) / 2))


def _linear_as_polys(X: DecisionSet, n: int) -> List[Poly]:
    """Linear rows of ``X`` as polynomial constraints ``a^T x - c >= 0``."""
    out = []

    def lin(a, c):
        terms = {(0,) * n: -float(c)}
        for j, aj in enumerate(np.asarray(a, dtype=float).ravel()):
            e = [0] * n
            e[j] = 1
            terms[tuple(e)] = float(aj)
        return Poly(n, terms)

    for a, c in X.linear_ineqs:
        out.append(lin(a, c))
    for a, c in X.linear_eqs:
        out.append(lin(a, c))
        out.append(-lin(a, c))
    return out


def build_sosconvex_relaxation(f: Poly, pc: PerturbedConstraint, X: DecisionSet, U: UncertaintySet,
                               k: int) -> ConicProgram:
    """Lifted problem: ``min <f, w>`` s.t. ``M_{d1}[w] >= 0``, ``w_0 = 1``,
    ``<u_i, w> >= 0``, ``(A pi(w) + b)^T [xi]_d in Q(g)_{2k}``, ``pi(w) in X``.
    """
    _check_order(pc, U, k)
    n = pc.n
    X.check(n)
    if f.r != n:
        raise DimensionError(f"objective in {f.r} variables, expected {n}")
    d1 = _sos_degree(f, X.poly_ineqs)
    Nw = basis_size(n, 2 * d1)
    prog = ConicProgram(f"sosconvex-k{k}")
    prog.add_block("w", "free", Nw)
    fc = f.coeffs(2 * d1)
    nz = np.flatnonzero(fc)
    prog.add_objective("w", nz, vals=fc[nz])
    prog.add_coeffs("w", prog.add_rows("w0", [1.0]), [0], vals=1.0)
    _attach_moment_cone(prog, n, d1, [], "w")
    if X.poly_ineqs:
        m1 = len(X.poly_ineqs)
        rows = prog.add_rows("u", np.zeros(m1))
        prog.add_block("uslack", "nonneg", m1)
        for t, u in enumerate(X.poly_ineqs):
            uc = u.coeffs(2 * d1)
            nz = np.flatnonzero(uc)
            prog.add_coeffs("w", np.full(nz.size, rows[t]), nz, vals=uc[nz])
        prog.add_coeffs("uslack", rows, np.arange(m1), vals=-1.0)
    xidx = np.arange(1, n + 1)      # positions of e_1..e_n in graded order
    enc = encode_qmod_membership(pc.A, pc.b, U.g, k)
    enc.attach(prog, {"x": ("w", xidx)})
    _attach_decision_set(prog, X, n, "w", xidx)
    prog.meta = {"enc": enc, "d1": d1}
    return prog


def build_sosconvex_dual(f: Poly, pc: PerturbedConstraint, X: DecisionSet, U: UncertaintySet,
                         k: int) -> ConicProgram:
    """``max tau - <b, y>`` s.t. ``f - y^T A x - lam^T u - tau in Sigma[x]_{2d1}``,
    ``y = z|_d``, ``z in S[g]_{2k}``, ``lam >= 0``; stated as a minimization.

    Linear rows of ``X`` enter as polynomial constraints; LMIs are not
    supported here.
    """
    _check_order(pc, U, k)
    n, r = pc.n, pc.r
    if X.lmi_blocks:
        raise NotImplementedError("explicit SOS-convex dual does not take LMIs")
    us = list(X.poly_ineqs) + _linear_as_polys(X, n)
    d1 = _sos_degree(f, X.poly_ineqs)
    Nx = basis_size(n, 2 * d1)
    N = basis_size(r, 2 * k)
    s = pc.A.shape[0]
    prog = ConicProgram(f"sosconvex-dual-k{k}")
    prog.add_block("tau", "free", 1)
    prog.add_objective("tau", [0], vals=-1.0)
    prog.add_block("z", "free", N)
    prog.add_objective("z", np.arange(s), vals=pc.b)
    lin = {"tau": np.zeros((Nx, 1))}
    lin["tau"][0, 0] = -1.0
    Az = np.zeros((Nx, N))
    Az[1:n + 1, :s] = -pc.A.T
    lin["z"] = Az
    cols = {"tau": ("tau", np.arange(1)), "z": ("z", np.arange(N))}
    if us:
        prog.add_block("lam", "nonneg", len(us))
        lin["lam"] = -np.column_stack([u.coeffs(2 * d1) for u in us])
        cols["lam"] = ("lam", np.arange(len(us)))
    enc = encode_sos_in_x(f.coeffs(2 * d1), lin, d1, n)
    enc.attach(prog, cols)
    _attach_moment_cone(prog, r, k, [U.g], "z")
    return prog


# ---------------------------------------------------------------------------
# coordinates


def normalize_coordinates(pc: PerturbedConstraint, U: UncertaintySet):
    """Rewrite the problem in ``eta`` with ``xi = mu + sqrt(Gamma) L eta``.

    ``L`` is the Cholesky factor of ``Lambda``, so ``U`` becomes the unit
    ball ``1 - |eta|^2 >= 0``.  The substitution is invertible and affine,
    hence it maps ``Q(g)_{2k}`` onto the quadratic module of the ball and
    keeps moment-matrix ranks.  Returns ``(pc_eta, U_eta, to_xi)`` where
    ``to_xi`` maps an ``eta``-tms back to ``xi``-coordinates.
    """
    if pc.r != U.r:
        raise DimensionError(f"constraint has r={pc.r}, uncertainty set r={U.r}")
    S = math.sqrt(U.Gamma) * U._chol
    Phi = substitution_matrix(U.mu, S, pc.d)
    pc_eta = PerturbedConstraint(Phi @ pc.A, Phi @ pc.b, pc.r)
    # keep the full degree even if the leading rows cancel
    if pc_eta.d != pc.d:
        pc_eta = _padded(pc_eta, pc.d)
    U_eta = UncertaintySet(1.0, np.zeros(U.r), np.eye(U.r))

    def to_xi(z: Tms) -> Tms:
        P = substitution_matrix(U.mu, S, z.degree)
        return Tms(z.r, z.degree, P.T @ z.entries)

    return pc_eta, U_eta, to_xi


def _padded(pc: PerturbedConstraint, d: int) -> PerturbedConstraint:
    s = basis_size(pc.r, d)
    A = np.zeros((s, pc.n))
    b = np.zeros(s)
    A[:pc.A.shape[0]] = pc.A
    b[:pc.b.shape[0]] = pc.b
    out = object.__new__(PerturbedConstraint)
    out.A, out.b, out.r = A, b, pc.r
    return out


# ---------------------------------------------------------------------------
# solve loops


@dataclass
class SolveOptions:
    gap_tol: float = 1e-6
    cert_tol: float = 1e-6
    rank_tol: float = 1e-6
    k_max: Optional[int] = None          # default k0 + 3
    cross_check: bool = False
    normalize: bool = True               # solve in coordinates where U is the unit ball
    backend: Optional[str] = None
    solver: SolverOptions = field(default_factory=SolverOptions)


@dataclass
class SolveReport:
    xstar: Optional[np.ndarray]
    fstar: float
    k_used: int
    gap: float
    flat_t: Optional[int]
    dual_y: Optional[Tms]
    dual_z: Optional[Tms]
    status: str
    fsos: float = float("nan")
    fmom: float = float("nan")
    k0: int = 1
    trace: List[dict] = field(default_factory=list)
    dual_check: Optional[float] = None
    w: Optional[Tms] = None
    lifted_value: Optional[float] = None

    @property
    def certified(self) -> bool:
        return self.status == "certified"


def _z_from(prog: ConicProgram, sol: PrimalDualSolution, r: int, k: int) -> Tms:
    return Tms(r, 2 * k, -sol.y[prog.groups["match"].rows])


def _run_loop(build, pc, opts: SolveOptions, dual_builder=None, finish=None, to_xi=None) -> SolveReport:
    k0 = relaxation_order_floor(pc.d)
    k_max = opts.k_max if opts.k_max is not None else k0 + 3
    trace: List[dict] = []
    best: Optional[SolveReport] = None
    for k in range(k0, k_max + 1):
        prog = build(k)
        sol = solve(prog, opts.solver, opts.backend)
        entry = {"k": k, "status": sol.status, "pobj": sol.pobj, "dobj": sol.dobj,
                 "gap": sol.gap, "iterations": sol.iterations}
        trace.append(entry)
        log.debug("order %d: %s pobj=%.8g dobj=%.8g", k, sol.status, sol.pobj, sol.dobj)
        if sol.status == "dual-infeasible":
            return SolveReport(None, -math.inf, k, math.nan, None, None, None,
                               "relaxation-unbounded", k0=k0, trace=trace)
        if sol.status == "primal-infeasible":
            continue
        if sol.status != "optimal":
            raise SolverFailure(f"conic solver reported {sol.status} at order {k}", trace)
        z = _z_from(prog, sol, pc.r, k)
        rep = finish(prog, sol, k)
        rep.flat_t = flat_truncation(z, k, k0, opts.rank_tol)
        if to_xi is not None:
            z = to_xi(z)
        rep.dual_z = z
        rep.dual_y = z.restrict(pc.d)
        rep.gap = sol.gap
        rep.fsos, rep.fmom = sol.pobj, sol.dobj
        rep.k0 = k0
        entry["flat_t"] = rep.flat_t
        if opts.cross_check and dual_builder is not None:
            dsol = solve(dual_builder(k), opts.solver, opts.backend)
            rep.dual_check = -dsol.pobj if dsol.status == "optimal" else math.nan
            entry["dual_check"] = rep.dual_check
        rep.trace = trace
        best = rep
        if rep.gap <= opts.gap_tol * (1 + abs(rep.fstar)) and rep.flat_t is not None:
            rep.status = "certified"
            return rep
    if best is None:
        return SolveReport(None, math.inf, k_max, math.nan, None, None, None,
                           "infeasible", k0=k0, trace=trace)
    best.status = "max-order-reached"
    return best


def solve_linear_cco(obj_c, pc: PerturbedConstraint, X: DecisionSet, U: UncertaintySet,
                     opts: Optional[SolveOptions] = None) -> SolveReport:
    opts = opts or SolveOptions()
    c = np.asarray(obj_c, dtype=float).ravel()

    def finish(prog, sol, k):
        x = sol.primal["x"].copy()
        return SolveReport(x, float(c @ x), k, 0.0, None, None, None, "pending")

    pw, Uw, to_xi = normalize_coordinates(pc, U) if opts.normalize else (pc, U, None)
    return _run_loop(lambda k: build_primal_relaxation(c, pw, X, Uw, k), pw, opts,
                     lambda k: build_dual_relaxation(c, pw, X, Uw, k), finish, to_xi)


def project_moments(w: Tms, n: int) -> np.ndarray:
    """``pi(w)``: the degree-one entries of ``w``, i.e. ``x`` for a Dirac ``w``."""
    return np.asarray(w.entries[1:n + 1], dtype=float).copy()


def solve_sosconvex_cco(f: Poly, pc: PerturbedConstraint, X: DecisionSet, U: UncertaintySet,
                        opts: Optional[SolveOptions] = None) -> SolveReport:
    """Solve the lifted problem; ``x* = pi(w*)`` and ``f* = f(x*)``.

    ``lifted_value`` keeps ``<f, w*>``; Jensen's inequality gives
    ``f(x*) <= <f, w*>`` for SOS-convex ``f``.
    """
    opts = opts or SolveOptions()
    n = pc.n

    def finish(prog, sol, k):
        d1 = prog.meta["d1"]
        w = Tms(n, 2 * d1, sol.primal["w"])
        x = project_moments(w, n)
        rep = SolveReport(x, float(f(x)), k, 0.0, None, None, None, "pending")
        rep.w = w
        rep.lifted_value = sol.pobj
        return rep

    pw, Uw, to_xi = normalize_coordinates(pc, U) if opts.normalize else (pc, U, None)
    dual = None if X.lmi_blocks else (lambda k: build_sosconvex_dual(f, pw, X, Uw, k))
    return _run_loop(lambda k: build_sosconvex_relaxation(f, pw, X, Uw, k), pw, opts, dual, finish, to_xi)


def min_on_U(p: Poly, U: UncertaintySet, k: int, opts: Optional[SolverOptions] = None,
             rank_tol: float = 1e-6, backend: Optional[str] = None, normalize: bool = True):
    """Order-``k`` lower bound on ``min_{xi in U} p(xi)``.

    Returns ``(gamma_k, v, flat)`` with ``v`` the dual moment vector
    (``v_0 = 1``) and ``flat`` whether flat truncation holds for ``v``.
    """
    if p.r != U.r:
        raise DimensionError("polynomial and uncertainty set dimensions differ")
    if p.degree > 2 * k:
        raise OrderTooSmall(f"deg(p)={p.degree} exceeds 2k={2 * k}")
    g = U.g
    if normalize:
        S = math.sqrt(U.Gamma) * U._chol
        deg = max(p.degree, 0)
        p = Poly.from_coeffs(U.r, substitution_matrix(U.mu, S, deg) @ p.coeffs(deg), deg)
        g = Poly(U.r, {(0,) * U.r: 1.0, **{tuple(2 if t == i else 0 for t in range(U.r)): -1.0
                                           for i in range(U.r)}})
    enc = encode_poly_membership(p, g, k)
    prog = ConicProgram(f"min-on-U-k{k}")
    prog.add_block("gamma", "free", 1)
    prog.add_objective("gamma", [0], vals=-1.0)
    enc.lin = {"gamma": np.zeros((enc.num_matchrows, 1))}
    enc.lin["gamma"][0, 0] = -1.0
    enc.attach(prog, {"gamma": ("gamma", np.arange(1))})
    sol = solve(prog, opts, backend)
    if sol.status != "optimal":
        raise SolverFailure(f"conic solver reported {sol.status} in min_on_U")
    v = Tms(U.r, 2 * k, -sol.y[prog.groups["match"].rows])
    kf = max(math.ceil(p.degree / 2), 1)
    flat = flat_truncation(v, k, min(kf, k), rank_tol) is not None
    if normalize:
        v = Tms(U.r, 2 * k, substitution_matrix(U.mu, S, 2 * k).T @ v.entries)
    return -sol.pobj, v, flat


def certify_solution(pc: PerturbedConstraint, U: UncertaintySet, rep: SolveReport, npoints: int = 10000,
                     seed: int = 0, tol: float = 1e-6, gap_tol: float = 1e-6,
                     opts: Optional[SolverOptions] = None, backend: Optional[str] = None) -> Dict[str, object]:
    """Independent checks of a solve report.

    Relative duality gap, flat truncation at the first order, a fresh
    lower bound on ``min_U h(x*, .)`` and ``h(x*, .)`` on ``npoints``
    draws from ``U`` (half uniform inside, half on the boundary).
    """
    out: Dict[str, object] = {"gap": rep.gap, "flat_t": rep.flat_t, "k0": rep.k0}
    out["gap_ok"] = bool(rep.gap <= gap_tol * (1 + abs(rep.fstar)))
    out["flat_ok"] = rep.flat_t == rep.k0
    k = max(relaxation_order_floor(pc.d), rep.k_used)
    hmin, _, _ = min_on_U(pc.poly_in_xi(rep.xstar), U, k, opts, backend=backend)
    out["min_on_U"] = hmin
    out["min_on_U_ok"] = bool(hmin >= -tol)
    rng = np.random.default_rng(seed)
    inner = U.sample_inside(npoints - npoints // 2, rng)
    u = rng.standard_normal((npoints // 2, U.r))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    shell = U.mu + math.sqrt(U.Gamma) * u @ U._chol.T
    vals = pc.evaluate(rep.xstar, np.vstack([inner, shell]))
    out["sampled_min"] = float(vals.min())
    out["sampled_ok"] = bool(vals.min() >= -tol)
    out["ok"] = all(out[key] for key in ("gap_ok", "flat_ok", "min_on_U_ok", "sampled_ok"))
    return out
