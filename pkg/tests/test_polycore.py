import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ccorobust.polycore import (DimensionError, Poly, basis_size, monomial_basis, poly_arith, poly_eval,
                                substitution_matrix)
from oracles import graded_lex


def test_basis_r2_d2():
    assert list(monomial_basis(2, 2).order) == [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]


def test_basis_degree_zero():
    assert list(monomial_basis(3, 0).order) == [(0, 0, 0)]


def test_basis_r3_d4_count():
    assert len(monomial_basis(3, 4)) == 35 == math.comb(7, 4) == basis_size(3, 4)


@pytest.mark.parametrize("r,d", [(1, 5), (2, 4), (3, 3), (4, 2)])
def test_basis_matches_bruteforce_order(r, d):
    assert list(monomial_basis(r, d).order) == graded_lex(r, d)


@given(st.integers(1, 4), st.integers(0, 5))
def test_index_roundtrip(r, d):
    B = monomial_basis(r, d)
    for i in range(len(B)):
        assert B.index_of(B.exponent_at(i)) == i


def test_eval_examples():
    x1, x2 = Poly.variable(2, 0), Poly.variable(2, 1)
    assert poly_eval(1 - x1 ** 2 - x2 ** 2, (0, 0)) == 1
    assert poly_eval(x1 * x2, (2, 3)) == 6


def test_mahalanobis_form_vanishes_at_center():
    mu = np.array([0.0676, 0.0132])
    Lam = np.array([[0.9887, -0.0057], [-0.0057, 0.9848]])
    P = np.linalg.inv(Lam)
    x = [Poly.variable(2, i) - mu[i] for i in range(2)]
    q = sum((P[i, j] * x[i] * x[j] for i in range(2) for j in range(2)), Poly(2, {}))
    assert abs(poly_eval(q, mu)) < 1e-15


def test_add_to_zero_and_product():
    x = Poly.variable(1, 0)
    z = poly_arith(x, -1 * x, "add")
    assert z.is_zero() and z.degree == 0
    assert poly_arith(1 - x ** 2, x ** 2, "mul") == x ** 2 - x ** 4


def test_dimension_mismatch():
    with pytest.raises(DimensionError):
        Poly.variable(2, 0) + Poly.variable(3, 0)
    with pytest.raises(DimensionError):
        poly_eval(Poly.variable(2, 0), (1, 2, 3))


def test_integer_coefficients_stay_exact():
    x = Poly.variable(2, 0)
    p = (2 - x ** 2) * 3
    assert all(isinstance(c, int) for _, c in p.items())


def sparse_poly(r, maxdeg):
    exps = st.tuples(*[st.integers(0, maxdeg)] * r).filter(lambda a: sum(a) <= maxdeg)
    coef = st.integers(-5, 5).filter(bool)
    return st.dictionaries(exps, coef, min_size=1, max_size=6).map(lambda d: Poly(r, d))


@settings(max_examples=50, deadline=None)
@given(sparse_poly(3, 3), sparse_poly(3, 3), st.lists(st.floats(-2, 2), min_size=3, max_size=3))
def test_product_matches_evaluation(p, q, t):
    pq = poly_arith(p, q, "mul")
    lhs, rhs = poly_eval(pq, t), poly_eval(p, t) * poly_eval(q, t)
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(rhs), sum(abs(c) for _, c in pq.items()))
    if not p.is_zero() and not q.is_zero():
        assert pq.degree == p.degree + q.degree


@settings(max_examples=30, deadline=None)
@given(sparse_poly(2, 3), sparse_poly(2, 3))
def test_exact_integer_product(p, q):
    # Fractions give an independent exact product at a rational point
    t = (Fraction(1, 3), Fraction(-2, 5))
    ev = lambda P: sum(c * t[0] ** a[0] * t[1] ** a[1] for a, c in P.items())
    assert ev(p * q) == ev(p) * ev(q)


def test_coeff_vector_roundtrip():
    x1, x2 = Poly.variable(2, 0), Poly.variable(2, 1)
    p = 3 * x1 ** 2 * x2 - x2 + 7
    assert Poly.from_coeffs(2, p.coeffs(3), 3) == p


def test_substitution_matrix_matches_composition(rng):
    r, d = 2, 3
    mu = rng.normal(size=r)
    S = rng.normal(size=(r, r))
    coef = rng.normal(size=basis_size(r, d))
    p = Poly.from_coeffs(r, coef, d)
    q = Poly.from_coeffs(r, substitution_matrix(mu, S, d) @ coef, d)
    for _ in range(5):
        eta = rng.normal(size=r)
        assert abs(poly_eval(q, eta) - poly_eval(p, mu + S @ eta)) < 1e-10
