"""Truncated multi-sequences, Riesz functional, moment/localizing matrices."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from .kernels import eval_monomials
from .polycore import DimensionError, Poly, basis_size, monomial_basis


class DegreeOverflow(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Tms:
    """A vector indexed by ``monomial_basis(r, degree)``."""

    r: int
    degree: int
    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float).ravel().copy()
        e.setflags(write=False)
        if e.shape[0] != basis_size(self.r, self.degree):
            raise DimensionError(
                f"tms of degree {self.degree} in {self.r} variables needs "
                f"{basis_size(self.r, self.degree)} entries, got {e.shape[0]}")
        object.__setattr__(self, "entries", e)

    def __getitem__(self, alpha) -> float:
        return float(self.entries[monomial_basis(self.r, self.degree).index_of(alpha)])

    def __len__(self):
        return self.entries.shape[0]

    def restrict(self, d: int) -> "Tms":
        """``y|_d``; a prefix of the entry vector."""
        if d > self.degree:
            raise DegreeOverflow(f"cannot restrict degree {self.degree} tms to {d}")
        return Tms(self.r, d, self.entries[:basis_size(self.r, d)])

    def __add__(self, other: "Tms") -> "Tms":
        if (self.r, self.degree) != (other.r, other.degree):
            raise DimensionError("tms shapes differ")
        return Tms(self.r, self.degree, self.entries + other.entries)

    def __mul__(self, c: float) -> "Tms":
        return Tms(self.r, self.degree, self.entries * c)

    __rmul__ = __mul__


def riesz(y: Tms, p: Poly) -> float:
    if p.r != y.r:
        raise DimensionError(f"polynomial in {p.r} variables, tms in {y.r}")
    basis = monomial_basis(y.r, y.degree)
    total = 0.0
    for a, c in p.items():
        if sum(a) > y.degree:
            raise DegreeOverflow(f"monomial {a} beyond tms degree {y.degree}")
        total += c * y.entries[basis.index_of(a)]
    return total


def localizing_side(r: int, k: int, g_degree: int) -> int:
    return basis_size(r, k - math.ceil(g_degree / 2))


@lru_cache(maxsize=256)
def _localizing_map(r: int, k: int, g_key: tuple):
    """COO description of ``y -> L_g^{(k)}[y]`` over the upper triangle.

    Returns ``(side, i, j, yidx, coef)``; entry ``(i, j)`` of the matrix is
    ``sum coef * y[yidx]`` over the records carrying that position.
    """
    g_deg = max((sum(a) for a, _ in g_key), default=0)
    if g_deg > 2 * k:
        raise DegreeOverflow(f"deg(g)={g_deg} exceeds 2k={2 * k}")
    s = k - math.ceil(g_deg / 2)
    rows_b = monomial_basis(r, s).array
    big = monomial_basis(r, 2 * k)
    side = rows_b.shape[0]
    iu, ju = np.triu_indices(side)
    ii, jj, yy, cc = [], [], [], []
    pair = rows_b[iu] + rows_b[ju]
    for gamma, c in g_key:
        ex = pair + np.asarray(gamma, dtype=np.int64)
        idx = np.fromiter((big.index_of(tuple(e)) for e in ex), dtype=np.int64, count=ex.shape[0])
        ii.append(iu)
        jj.append(ju)
        yy.append(idx)
        cc.append(np.full(iu.shape[0], float(c)))
    if not g_key:
        empty = np.zeros(0, dtype=np.int64)
        return side, empty, empty, empty, np.zeros(0)
    return side, np.concatenate(ii), np.concatenate(jj), np.concatenate(yy), np.concatenate(cc)


def _g_key(g: Poly) -> tuple:
    return tuple(sorted(g.items()))


def localizing_map(g: Poly, k: int):
    return _localizing_map(g.r, k, _g_key(g))


def localizing_matrix(g: Poly, y: Tms, k: int) -> np.ndarray:
    if g.r != y.r:
        raise DimensionError("g and y dimensions differ")
    if y.degree < 2 * k:
        raise DegreeOverflow(f"tms degree {y.degree} < 2k = {2 * k}")
    side, i, j, yi, c = localizing_map(g, k)
    upper = np.zeros((side, side))
    np.add.at(upper, (i, j), c * y.entries[yi])
    out = np.triu(upper) + np.triu(upper, 1).T
    return out


def moment_matrix(y: Tms, k: int) -> np.ndarray:
    return localizing_matrix(Poly.constant(y.r, 1), y, k)


def localizing_symbolic(g: Poly, k: int) -> list:
    """Entries of ``L_g^{(k)}[y]`` as ``{exponent: coefficient}`` linear forms.

    Coefficients keep the type of ``g``'s coefficients, so integer input gives
    an exact integer result.
    """
    g_deg = g.degree
    if g_deg > 2 * k:
        raise DegreeOverflow(f"deg(g)={g_deg} exceeds 2k={2 * k}")
    b = monomial_basis(g.r, k - math.ceil(g_deg / 2)).order
    out = []
    for a1 in b:
        row = []
        for a2 in b:
            form = {}
            for gamma, c in g.items():
                e = tuple(x + y + z for x, y, z in zip(a1, a2, gamma))
                form[e] = form.get(e, 0) + c
            row.append({e: c for e, c in form.items() if c != 0})
        out.append(row)
    return out


def tms_of_point(t, degree: int) -> Tms:
    t = np.atleast_1d(np.asarray(t, dtype=float))
    r = t.shape[0]
    vals = eval_monomials(t[None, :], monomial_basis(r, degree).array)[0]
    return Tms(r, degree, vals)


def numeric_rank(M: np.ndarray, rank_tol: float = 1e-6, atol: float = 0.0) -> int:
    """Rank counting singular values above ``max(rank_tol*s_max*side, atol)``."""
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    thr = max(rank_tol * s[0] * M.shape[0], atol)
    return int(np.count_nonzero(s > thr))


def flat_truncation(z: Tms, k: int, k0: int, rank_tol: float = 1e-6,
                    atol: float = 0.0) -> Optional[int]:
    """Smallest ``t`` in ``[k0, k]`` with ``rank M_t[z] == rank M_{t-1}[z]``."""
    if z.degree < 2 * k:
        raise DegreeOverflow(f"tms degree {z.degree} < 2k = {2 * k}")
    if not 1 <= k0 <= k:
        raise ValueError(f"need 1 <= k0 <= k, got k0={k0}, k={k}")
    prev = numeric_rank(moment_matrix(z, k0 - 1), rank_tol, atol)
    for t in range(k0, k + 1):
        cur = numeric_rank(moment_matrix(z, t), rank_tol, atol)
        if cur == prev:
            return t
        prev = cur
    return None
