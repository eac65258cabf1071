"""Sparse multivariate polynomials over graded-lex monomial bases.

The monomial order is graded, and inside each degree lexicographic with
``xi_1 > xi_2 > ... > xi_r``, so that for ``r = 2, d = 2`` the basis reads
``1, xi1, xi2, xi1^2, xi1*xi2, xi2^2``.  Coefficient vectors everywhere in
the package (problem files, tms vectors, matching rows) use this order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Iterable, Iterator, Mapping, Sequence, Tuple

import numpy as np

Exponent = Tuple[int, ...]


class DimensionError(ValueError):
    pass


def _graded_block(t: int, r: int) -> Iterator[Exponent]:
    if r == 1:
        yield (t,)
        return
    for first in range(t, -1, -1):
        for rest in _graded_block(t - first, r - 1):
            yield (first,) + rest


@dataclass(frozen=True)
class MonomialBasis:
    r: int
    d: int
    order: Tuple[Exponent, ...]
    _index: Dict[Exponent, int] = field(repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.order)

    def __iter__(self):
        return iter(self.order)

    def index_of(self, alpha: Sequence[int]) -> int:
        try:
            return self._index[tuple(alpha)]
        except KeyError:
            raise KeyError(f"exponent {tuple(alpha)} not in basis N^{self.r}_{self.d}") from None

    def exponent_at(self, i: int) -> Exponent:
        return self.order[i]

    def __contains__(self, alpha) -> bool:
        return tuple(alpha) in self._index

    @property
    def array(self) -> np.ndarray:
        """Exponents as an ``(len, r)`` integer array."""
        return _basis_array(self.r, self.d)

    def degree_count(self, t: int) -> int:
        """Number of monomials of degree at most ``t`` (a prefix length)."""
        return math.comb(self.r + t, t)


@lru_cache(maxsize=None)
def monomial_basis(r: int, d: int) -> MonomialBasis:
    if r < 1 or d < 0:
        raise ValueError(f"need r >= 1 and d >= 0, got r={r}, d={d}")
    order = tuple(a for t in range(d + 1) for a in _graded_block(t, r))
    return MonomialBasis(r, d, order, {a: i for i, a in enumerate(order)})


@lru_cache(maxsize=None)
def _basis_array(r: int, d: int) -> np.ndarray:
    arr = np.array(monomial_basis(r, d).order, dtype=np.int64).reshape(-1, r)
    arr.setflags(write=False)
    return arr


def basis_size(r: int, d: int) -> int:
    return math.comb(r + d, d)


class Poly:
    """Immutable sparse polynomial in ``r`` variables.

    ``terms`` maps exponent tuples to nonzero coefficients.  Coefficients
    are kept as given (ints stay ints), which lets index-rule checks run in
    exact integer arithmetic.
    """

    __slots__ = ("r", "_terms")
    # let numpy scalars defer to Poly.__rmul__ instead of iterating the poly
    __array_ufunc__ = None

    def __init__(self, r: int, terms: Mapping[Sequence[int], float] | Iterable = ()):
        if r < 1:
            raise ValueError("polynomial dimension must be positive")
        items = terms.items() if isinstance(terms, Mapping) else terms
        acc: Dict[Exponent, float] = {}
        for alpha, c in items:
            alpha = tuple(int(a) for a in alpha)
            if len(alpha) != r:
                raise DimensionError(f"exponent {alpha} has length {len(alpha)}, expected {r}")
            if any(a < 0 for a in alpha):
                raise ValueError(f"negative exponent in {alpha}")
            acc[alpha] = acc.get(alpha, 0) + c
        self.r = r
        self._terms = {a: c for a, c in acc.items() if c != 0}

    # constructors -------------------------------------------------------
    @classmethod
    def constant(cls, r: int, c: float) -> "Poly":
        return cls(r, {(0,) * r: c})

    @classmethod
    def variable(cls, r: int, i: int) -> "Poly":
        alpha = [0] * r
        alpha[i] = 1
        return cls(r, {tuple(alpha): 1})

    @classmethod
    def from_coeffs(cls, r: int, coeffs: Sequence[float], d: int | None = None) -> "Poly":
        """Inverse of :meth:`coeffs` for a graded-lex coefficient vector."""
        coeffs = list(coeffs)
        if d is None:
            d = 0
            while basis_size(r, d) < len(coeffs):
                d += 1
        basis = monomial_basis(r, d)
        if len(coeffs) > len(basis):
            raise DimensionError("coefficient vector longer than the basis")
        return cls(r, zip(basis.order, coeffs))

    # accessors ----------------------------------------------------------
    @property
    def terms(self) -> Dict[Exponent, float]:
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def __getitem__(self, alpha) -> float:
        return self._terms.get(tuple(alpha), 0)

    def __len__(self) -> int:
        return len(self._terms)

    @property
    def degree(self) -> int:
        # deg(0) := 0
        return max((sum(a) for a in self._terms), default=0)

    def is_zero(self) -> bool:
        return not self._terms

    def coeffs(self, d: int | None = None) -> np.ndarray:
        """Dense coefficient vector over ``monomial_basis(r, d)``."""
        d = self.degree if d is None else d
        if self.degree > d and not self.is_zero():
            raise DimensionError(f"degree {self.degree} exceeds basis degree {d}")
        basis = monomial_basis(self.r, d)
        out = np.zeros(len(basis))
        for a, c in self._terms.items():
            out[basis.index_of(a)] = c
        return out

    # arithmetic ---------------------------------------------------------
    def _check(self, other: "Poly") -> None:
        if self.r != other.r:
            raise DimensionError(f"dimension mismatch: {self.r} vs {other.r}")

    def __add__(self, other):
        if not isinstance(other, Poly):
            other = Poly.constant(self.r, other)
        self._check(other)
        return Poly(self.r, list(self._terms.items()) + list(other._terms.items()))

    __radd__ = __add__

    def __neg__(self):
        return Poly(self.r, {a: -c for a, c in self._terms.items()})

    def __sub__(self, other):
        return self + (-other if isinstance(other, Poly) else -other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Poly):
            return Poly(self.r, {a: c * other for a, c in self._terms.items()})
        self._check(other)
        acc: Dict[Exponent, float] = {}
        for a, ca in self._terms.items():
            for b, cb in other._terms.items():
                e = tuple(i + j for i, j in zip(a, b))
                acc[e] = acc.get(e, 0) + ca * cb
        return Poly(self.r, acc)

    __rmul__ = __mul__

    def __pow__(self, n: int):
        out = Poly.constant(self.r, 1)
        for _ in range(n):
            out = out * self
        return out

    def __eq__(self, other) -> bool:
        return isinstance(other, Poly) and self.r == other.r and self._terms == other._terms

    def __hash__(self):
        return hash((self.r, frozenset(self._terms.items())))

    def __repr__(self) -> str:
        if not self._terms:
            return f"Poly(r={self.r}, 0)"
        parts = []
        for a, c in sorted(self._terms.items(), key=lambda t: (sum(t[0]), tuple(-i for i in t[0]))):
            mono = "*".join(f"x{i + 1}^{e}" if e > 1 else f"x{i + 1}" for i, e in enumerate(a) if e)
            parts.append(f"{c:g}*{mono}" if mono else f"{c:g}")
        return f"Poly(r={self.r}, {' + '.join(parts)})"

    # evaluation ---------------------------------------------------------
    def __call__(self, point):
        return poly_eval(self, point)

    def derivative(self, i: int) -> "Poly":
        out = {}
        for a, c in self._terms.items():
            if a[i]:
                b = list(a)
                b[i] -= 1
                out[tuple(b)] = c * a[i]
        return Poly(self.r, out)

    def to_pairs(self) -> list:
        """Serializable ``[[exponent], coeff]`` list, graded order."""
        basis_key = lambda t: (sum(t[0]), tuple(-i for i in t[0]))
        return [[list(a), c] for a, c in sorted(self._terms.items(), key=basis_key)]

    @classmethod
    def from_pairs(cls, r: int, pairs) -> "Poly":
        return cls(r, [(tuple(a), c) for a, c in pairs])


def poly_eval(p: Poly, point) -> float:
    point = np.asarray(point, dtype=float).ravel()
    if point.shape[0] != p.r:
        raise DimensionError(f"point has dimension {point.shape[0]}, polynomial has {p.r}")
    vals = [c * math.prod(float(point[i]) ** e for i, e in enumerate(a) if e) for a, c in p.items()]
    return math.fsum(vals)


def poly_arith(p: Poly, q, op: str) -> Poly:
    """``op`` is one of ``add``, ``mul`` or ``scale`` (``q`` a scalar)."""
    if op == "add":
        return p + q
    if op == "mul":
        return p * q
    if op == "scale":
        return p * float(q)
    raise ValueError(f"unknown op {op!r}")


def substitution_matrix(mu, S, d: int) -> np.ndarray:
    """Matrix of ``p(xi) -> p(mu + S eta)`` on coefficient vectors of degree ``d``.

    Column ``alpha`` holds the coefficients of ``(mu + S eta)^alpha`` over
    ``monomial_basis(r, d)``; degrees never increase, so the map is
    block lower-triangular in the graded order.
    """
    mu = np.asarray(mu, dtype=float).ravel()
    S = np.atleast_2d(np.asarray(S, dtype=float))
    r = mu.shape[0]
    basis = monomial_basis(r, d)
    n = len(basis)
    arr = basis.array
    # shift[j][i] = index of basis[i] + e_j (or -1 past degree d)
    shift = np.full((r, n), -1, dtype=np.int64)
    for i, a in enumerate(basis.order):
        if sum(a) < d:
            for j in range(r):
                b = list(a)
                b[j] += 1
                shift[j, i] = basis.index_of(b)
    out = np.zeros((n, n))
    out[0, 0] = 1.0
    for col in range(1, n):
        a = arr[col]
        i = int(np.flatnonzero(a)[0])
        prev = list(a)
        prev[i] -= 1
        src = out[:, basis.index_of(prev)]
        new = mu[i] * src
        nz = np.flatnonzero(src)
        for j in range(r):
            if S[i, j] != 0:
                tgt = shift[j, nz]
                ok = tgt >= 0
                new[tgt[ok]] += S[i, j] * src[nz[ok]]
        out[:, col] = new
    return out
