import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ccorobust.certkit import (OrderTooSmall, build_c_alpha, encode_poly_membership, encode_qmod_membership,
                               encode_sos_in_x, is_sos_convex, membership_feasible)
from ccorobust.conicore import solve
from ccorobust.momentkit import Tms, localizing_matrix, moment_matrix, riesz
from ccorobust.polycore import Poly, basis_size, monomial_basis, poly_eval
from ccorobust.robustsolve import UncertaintySet, build_primal_relaxation

xi = Poly.variable(1, 0)
G1 = 1 - xi ** 2


def test_g_itself_is_in_module():
    ok, sol, _ = membership_feasible(encode_poly_membership(G1, G1, 1))
    assert ok
    assert np.allclose(sol.primal["Q0"], 0, atol=1e-6)
    assert np.allclose(sol.primal["Q1"], [[1.0]], atol=1e-6)


def test_xi_not_in_module():
    ok, sol, _ = membership_feasible(encode_poly_membership(xi, G1, 1))
    assert not ok and sol.status == "primal-infeasible"


def test_two_plus_xi_certificate():
    enc = encode_poly_membership(2 + xi, G1, 1)
    ok, sol, _ = membership_feasible(enc)
    assert ok
    back = enc.reassemble(sol)
    assert all(abs(back[a] - (2 + xi)[a]) < 1e-7 for a in [(0,), (1,), (2,)])
    # the hand certificate (xi/2 + 1)^2 + 3/4 + (1/4) g is one feasible point
    hand = (0.5 * xi + 1) ** 2 + 0.75 + 0.25 * G1
    assert hand == 2 + xi


def test_example_shapes(fixture_problem):
    pf = fixture_problem("ex6.3")
    pc = pf.perturbed_constraint()
    enc = encode_qmod_membership(pc.A, pc.b, pf.uncertainty(1.0).g, 2)
    assert enc.sides == [10, 4]
    assert enc.num_matchrows == 35


def test_order_too_small(fixture_problem):
    pc = fixture_problem("ex6.3").perturbed_constraint()
    with pytest.raises(OrderTooSmall):
        encode_qmod_membership(pc.A, pc.b, fixture_problem("ex6.3").uncertainty(1.0).g, 1)


def _sos_target(p: Poly, d1):
    return encode_sos_in_x(p.coeffs(2 * d1), {}, d1, p.r)


def test_sos_in_x_square():
    x = Poly.variable(1, 0)
    ok, sol, _ = membership_feasible(_sos_target(x ** 2, 1))
    assert ok
    assert np.allclose(sol.primal["Q0"], [[0, 0], [0, 1]], atol=1e-6)


def test_sos_in_x_negative():
    x = Poly.variable(1, 0)
    ok, _, _ = membership_feasible(_sos_target(-1 * x ** 2, 1))
    assert not ok


def test_sos_in_x_rank_one():
    x1, x2 = Poly.variable(2, 0), Poly.variable(2, 1)
    ok, sol, _ = membership_feasible(_sos_target((x1 - x2) ** 2, 1))
    assert ok
    Q = sol.primal["Q0"]
    v = np.array([0, 1, -1.0])
    assert np.allclose(Q, np.outer(v, v), atol=1e-6)


def test_c_alpha_univariate():
    fam = build_c_alpha(1, 1)
    assert np.array_equal(fam.dual[(0,)], [[1, 0], [0, 0]])
    assert np.array_equal(fam.dual[(1,)], [[0, 0.5], [0.5, 0]])
    assert np.array_equal(fam.dual[(2,)], [[0, 0], [0, 1]])
    assert np.allclose(fam.recompose([3.0]), [[1, 3], [3, 9]])


def test_c_alpha_at_origin():
    fam = build_c_alpha(3, 2)
    E = np.zeros((10, 10))
    E[0, 0] = 1
    assert np.array_equal(fam.recompose(np.zeros(3)), E)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_c_alpha_recomposition_and_trace(seed):
    rng = np.random.default_rng(seed)
    n, d1 = 2, 2
    fam = build_c_alpha(n, d1)
    x = rng.normal(size=n)
    v = np.prod(x[None, :] ** monomial_basis(n, d1).array, axis=1)
    assert np.allclose(fam.recompose(x), np.outer(v, v))
    w = Tms(n, 2 * d1, rng.normal(size=basis_size(n, 2 * d1)))
    q = Poly.from_coeffs(n, rng.normal(size=basis_size(n, 2 * d1)), 2 * d1)
    assert abs(np.sum(moment_matrix(w, d1) * fam.gram_of(q)) - riesz(w, q)) < 1e-9
    for a in monomial_basis(n, 2 * d1).order:
        for b in list(monomial_basis(n, 2 * d1).order)[:4]:
            assert abs(np.sum(fam.matrices[b] * fam.dual[a]) - (a == b)) < 1e-12


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_soundness_by_evaluation(seed):
    rng = np.random.default_rng(seed)
    r, k = 2, 2
    U = UncertaintySet(rng.uniform(0.5, 2.0), rng.normal(size=r), np.eye(r) * rng.uniform(0.5, 2.0))
    # a strictly positive target: a known SOS plus a positive constant
    s = Poly.from_coeffs(r, rng.normal(size=basis_size(r, 2)), 2)
    target = s * s + 0.5 + Poly.from_coeffs(r, 0.1 * rng.normal(size=basis_size(r, 2)), 2)
    enc = encode_poly_membership(target, U.g, k)
    ok, sol, _ = membership_feasible(enc)
    if not ok:
        return
    back = enc.reassemble(sol)
    diff = back + (-1) * target
    assert max((abs(c) for _, c in diff.items()), default=0.0) <= 1e-6 * (1 + max(abs(c) for _, c in target.items()))
    pts = U.sample_inside(1000, rng)
    vals = np.array([poly_eval(back, p) for p in pts])
    assert vals.min() >= -1e-6


def test_dual_is_moment_feasible(fixture_problem):
    pf = fixture_problem("ex6.3")
    U = pf.uncertainty(1.5387)
    prog = build_primal_relaxation(pf.objective_vector(), pf.perturbed_constraint(), pf.decision(), U, 2)
    sol = solve(prog)
    assert sol.status == "optimal"
    z = Tms(3, 4, -sol.y[prog.groups["match"].rows])
    scale = np.abs(z.entries).max()
    assert np.linalg.eigvalsh(moment_matrix(z, 2))[0] >= -1e-6 * scale
    assert np.linalg.eigvalsh(localizing_matrix(U.g, z, 2))[0] >= -1e-6 * scale


@pytest.mark.parametrize("target", [2 + xi, G1, 1 + xi ** 3])
def test_feasible_stays_feasible_at_higher_order(target):
    k = max(1, (target.degree + 1) // 2)
    ok, _, _ = membership_feasible(encode_poly_membership(target, G1, k))
    if ok:
        assert membership_feasible(encode_poly_membership(target, G1, k + 1))[0]


def test_sos_convex_preflight(fixture_problem):
    pf = fixture_problem("ex6.7")
    assert is_sos_convex(pf.objective_poly())
    for u in pf.decision().poly_ineqs:
        assert is_sos_convex(-1 * u)
    x = Poly.variable(1, 0)
    assert not is_sos_convex(x ** 4 - 3 * x ** 2)
