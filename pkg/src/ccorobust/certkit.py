"""Quadratic-module and SOS memberships as conic constraints.

Membership ``p in Q(g)_{2k} = Sigma_{2k} + g_1 Sigma_{2k-deg g_1} + ...``
is encoded by Gram matrices ``Q_0, Q_1, ...`` and one coefficient-matching
row per monomial of degree at most ``2k``::

    <B_alpha, Q_0> + sum_i <B^{g_i}_alpha, Q_i> = p_alpha

The row structure is the adjoint of the localizing-matrix index rule in
:mod:`ccorobust.momentkit`, so the multipliers of the matching rows form a
tms ``z`` with ``M_k[z]`` and ``L_g[z]`` as the dual cone variables.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .conicore import ConicProgram, PrimalDualSolution, SolverOptions, solve
from .momentkit import localizing_map
from .polycore import DimensionError, Poly, basis_size, monomial_basis


class OrderTooSmall(ValueError):
    pass


@dataclass
class GramBlock:
    name: str
    weight: Poly          # 1 for the SOS part, g_i otherwise
    side: int
    rows: np.ndarray      # matching-row index per record
    i: np.ndarray
    j: np.ndarray
    vals: np.ndarray


@dataclass
class QmodEncoding:
    """Coefficient matching for ``const + sum_v lin[v] @ var_v in Q(g)_{2k}``.

    ``const`` and each ``lin[v]`` are indexed by ``monomial_basis(r, 2k)``;
    ``lin[v]`` has one column per entry of the external variable ``v``.
    """

    r: int
    k: int
    blocks: List[GramBlock]
    const: np.ndarray
    lin: Dict[str, np.ndarray] = field(default_factory=dict)
    group: str = "match"

    @property
    def num_matchrows(self) -> int:
        return basis_size(self.r, 2 * self.k)

    @property
    def sides(self) -> List[int]:
        return [b.side for b in self.blocks]

    def attach(self, prog: ConicProgram, columns: Dict[str, Tuple[str, np.ndarray]],
               prefix: str = "") -> np.ndarray:
        """Add the Gram blocks and matching rows to ``prog``.

        ``columns[v] = (block, idx)`` says where the entries of external
        variable ``v`` live in ``prog``.  Returns the matching row ids
        (group ``prefix + group``).
        """
        N = self.num_matchrows
        keys = list(monomial_basis(self.r, 2 * self.k).order)
        rows = prog.add_rows(prefix + self.group, self.const, keys)
        for blk in self.blocks:
            name = prefix + blk.name
            prog.add_block(name, "psd", blk.side)
            prog.add_coeffs(name, rows[blk.rows], blk.i, blk.j, blk.vals)
        for v, mat in self.lin.items():
            if v not in columns:
                raise KeyError(f"no program columns given for variable {v!r}")
            bname, idx = columns[v]
            idx = np.asarray(idx)
            rr, cc = np.nonzero(mat)
            if rr.size:
                prog.add_coeffs(bname, rows[rr], idx[cc], vals=-mat[rr, cc])
        return rows

    def to_program(self) -> ConicProgram:
        """Stand-alone feasibility program (zero objective)."""
        prog = ConicProgram("qmod-membership")
        cols = {}
        for v, mat in self.lin.items():
            prog.add_block(v, "free", mat.shape[1])
            cols[v] = (v, np.arange(mat.shape[1]))
        self.attach(prog, cols)
        return prog

    def gram_polys(self, sol: PrimalDualSolution, prefix: str = "") -> List[Poly]:
        """``sigma_i = [xi]^T Q_i [xi]`` for each block, from a solution."""
        out = []
        for blk in self.blocks:
            Q = sol.primal[prefix + blk.name]
            b = monomial_basis(self.r, _half(self.k, blk.weight)).order
            terms = {}
            for a in range(blk.side):
                for c in range(blk.side):
                    e = tuple(x + y for x, y in zip(b[a], b[c]))
                    terms[e] = terms.get(e, 0.0) + Q[a, c]
            out.append(Poly(self.r, terms))
        return out

    def reassemble(self, sol: PrimalDualSolution, prefix: str = "") -> Poly:
        """``sigma_0 + sum g_i sigma_i`` from the solved Gram matrices."""
        total = Poly(self.r, {})
        for blk, sig in zip(self.blocks, self.gram_polys(sol, prefix)):
            total = total + blk.weight * sig
        return total

    def target(self, values: Dict[str, np.ndarray]) -> Poly:
        """The target polynomial for given external variable values."""
        vec = self.const.copy()
        for v, mat in self.lin.items():
            vec = vec + mat @ np.asarray(values[v], dtype=float)
        return Poly.from_coeffs(self.r, vec, 2 * self.k)


def _half(k: int, g: Poly) -> int:
    return k - math.ceil(g.degree / 2)


def _gram_blocks(r: int, k: int, gs: Sequence[Poly]) -> List[GramBlock]:
    out = []
    weights = [Poly.constant(r, 1)] + list(gs)
    for idx, g in enumerate(weights):
        if g.r != r:
            raise DimensionError("g lives in a different dimension")
        if g.degree > 2 * k:
            raise OrderTooSmall(f"2k={2 * k} is below deg(g)={g.degree}")
        side, i, j, yidx, coef = localizing_map(g, k)
        w = np.where(i == j, 1.0, 2.0) * coef
        out.append(GramBlock(f"Q{idx}", g, side, yidx, i, j, w))
    return out


def _as_tuple(g) -> List[Poly]:
    if g is None:
        return []
    return [g] if isinstance(g, Poly) else list(g)


def encode_qmod_membership(A, b, g, k: int) -> QmodEncoding:
    """Encode ``(A x + b)^T [xi]_d in Q(g)_{2k} ∩ R[xi]_d``.

    ``A`` has one row per monomial of ``[xi]_d`` (graded order) and one
    column per decision variable; ``g`` is a polynomial or a tuple of them.
    Rows of degree above ``d`` pin the certificate's coefficients to zero.
    """
    gs = _as_tuple(g)
    if not gs:
        raise ValueError("need at least one constraint polynomial g")
    r = gs[0].r
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).ravel()
    if A.shape[0] != b.shape[0]:
        raise DimensionError(f"A has {A.shape[0]} rows but b has {b.shape[0]}")
    d = 0
    while basis_size(r, d) < A.shape[0]:
        d += 1
    if basis_size(r, d) != A.shape[0]:
        raise DimensionError(f"{A.shape[0]} rows is not a basis size for r={r}")
    if 2 * k < d:
        raise OrderTooSmall(f"2k={2 * k} is below the constraint degree d={d}")
    N = basis_size(r, 2 * k)
    const = np.zeros(N)
    const[:b.shape[0]] = b
    lin = np.zeros((N, A.shape[1]))
    lin[:A.shape[0]] = A
    return QmodEncoding(r, k, _gram_blocks(r, k, gs), const, {"x": lin})


def encode_poly_membership(p: Poly, g, k: int) -> QmodEncoding:
    """``p in Q(g)_{2k}`` for a fixed polynomial (no external variables)."""
    gs = _as_tuple(g)
    if p.degree > 2 * k:
        raise OrderTooSmall(f"deg(p)={p.degree} exceeds 2k={2 * k}")
    return QmodEncoding(p.r, k, _gram_blocks(p.r, k, gs), p.coeffs(2 * k), {})


def encode_sos_in_x(const, lin: Dict[str, np.ndarray], d1: int, n: int) -> QmodEncoding:
    """``const + sum_v lin[v] @ v in Sigma[x]_{2 d1}`` with one Gram block.

    ``const`` (length ``C(n+2d1, 2d1)``) and the rows of each ``lin[v]``
    follow ``monomial_basis(n, 2*d1)``.
    """
    N = basis_size(n, 2 * d1)
    const = np.asarray(const, dtype=float).ravel()
    if const.shape[0] > N:
        raise OrderTooSmall(f"target has degree above 2*d1={2 * d1}")
    c = np.zeros(N)
    c[:const.shape[0]] = const
    full = {}
    for v, mat in lin.items():
        mat = np.atleast_2d(np.asarray(mat, dtype=float))
        if mat.shape[0] > N:
            raise OrderTooSmall(f"coefficients of {v!r} exceed degree 2*d1={2 * d1}")
        pad = np.zeros((N, mat.shape[1]))
        pad[:mat.shape[0]] = mat
        full[v] = pad
    return QmodEncoding(n, d1, _gram_blocks(n, d1, []), c, full, group="sos")


def membership_feasible(enc: QmodEncoding, opts: Optional[SolverOptions] = None):
    """Solve the stand-alone feasibility program; returns ``(ok, sol, prog)``."""
    prog = enc.to_program()
    sol = solve(prog, opts)
    return sol.status == "optimal", sol, prog


# ---------------------------------------------------------------------------
# C_alpha decomposition of moment matrices


@dataclass
class CAlphaFamily:
    """``[x]_{d1}[x]_{d1}^T = sum_alpha x^alpha C_alpha``.

    ``matrices[alpha]`` has a one at every ``(beta, gamma)`` with
    ``beta + gamma = alpha``, so ``M_{d1}[w] = sum_alpha w_alpha C_alpha``.
    ``dual[alpha]`` spreads a unit weight evenly over the same positions;
    ``sum_alpha q_alpha dual[alpha]`` is a Gram matrix of ``q`` and
    ``<C_beta, dual[alpha]> = [alpha == beta]``.
    """

    n: int
    d1: int
    matrices: Dict[tuple, np.ndarray]
    dual: Dict[tuple, np.ndarray]

    def recompose(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        side = basis_size(self.n, self.d1)
        out = np.zeros((side, side))
        for a, C in self.matrices.items():
            out += np.prod(x ** np.asarray(a)) * C
        return out

    def gram_of(self, q: Poly) -> np.ndarray:
        side = basis_size(self.n, self.d1)
        out = np.zeros((side, side))
        for a, c in q.items():
            if a not in self.dual:
                raise OrderTooSmall(f"monomial {a} beyond degree {2 * self.d1}")
            out += c * self.dual[a]
        return out


def build_c_alpha(n: int, d1: int) -> CAlphaFamily:
    if n < 1 or d1 < 1:
        raise ValueError("need n >= 1 and d1 >= 1")
    b = monomial_basis(n, d1).order
    side = len(b)
    mats: Dict[tuple, np.ndarray] = {a: np.zeros((side, side)) for a in monomial_basis(n, 2 * d1).order}
    for i in range(side):
        for j in range(side):
            mats[tuple(x + y for x, y in zip(b[i], b[j]))][i, j] = 1.0
    dual = {a: C / C.sum() for a, C in mats.items()}
    return CAlphaFamily(n, d1, mats, dual)


# ---------------------------------------------------------------------------
# SOS-convexity pre-flight


def hessian_form(p: Poly) -> Poly:
    """``y^T (nabla^2 p)(x) y`` as a polynomial in ``(x, y)``."""
    n = p.r
    terms: Dict[tuple, float] = {}
    for i in range(n):
        for j in range(n):
            hij = p.derivative(i).derivative(j)
            for a, c in hij.items():
                yy = [0] * n
                yy[i] += 1
                yy[j] += 1
                e = tuple(a) + tuple(yy)
                terms[e] = terms.get(e, 0.0) + c
    return Poly(2 * n, terms)


def is_sos_convex(p: Poly, opts: Optional[SolverOptions] = None) -> bool:
    """Check ``nabla^2 p = V^T V`` through an SOS program for the Hessian form.

    The Gram basis is ``y_i * x^beta`` with ``|beta| <= (deg p - 2) / 2``,
    which is the Newton-polytope-reduced basis of a form quadratic in ``y``.
    Intended for small ``n``.
    """
    n = p.r
    if p.degree <= 1:
        return True
    q = hessian_form(p)
    if q.is_zero():
        return True
    h = (p.degree - 2 + 1) // 2
    xb = monomial_basis(n, h).order
    basis = [tuple(bx) + tuple(1 if t == i else 0 for t in range(n)) for i in range(n) for bx in xb]
    index: Dict[tuple, int] = {}
    recs = []
    for a in range(len(basis)):
        for c in range(a, len(basis)):
            e = tuple(x + y for x, y in zip(basis[a], basis[c]))
            row = index.setdefault(e, len(index))
            recs.append((row, a, c, 1.0 if a == c else 2.0))
    if any(e not in index for e, _ in q.items()):
        return False
    prog = ConicProgram("sos-convexity")
    prog.add_block("G", "psd", len(basis))
    rhs = np.zeros(len(index))
    for e, c in q.items():
        rhs[index[e]] = c
    rows = prog.add_rows("match", rhs, list(index))
    rr, ii, jj, vv = (np.array(t) for t in zip(*recs))
    prog.add_coeffs("G", rows[rr.astype(int)], ii.astype(int), jj.astype(int), vv)
    return solve(prog, opts).status == "optimal"
