import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ccorobust.conicore import solve
from ccorobust.momentkit import tms_of_point
from ccorobust.polycore import Poly, poly_eval
from ccorobust.robustsolve import (DecisionSet, NotPositiveDefinite, PerturbedConstraint, SolveOptions,
                                   UncertaintySet, build_dual_relaxation, build_primal_relaxation,
                                   certify_solution, min_on_U, project_moments, relaxation_order_floor,
                                   solve_linear_cco, solve_sosconvex_cco)

# toy: min x  s.t.  x - xi >= 0 on [-1, 1]
TOY_PC = PerturbedConstraint.from_terms([([1.0], 0.0, (0,)), (None, -1.0, (1,))], 1, 1)
UNIT = UncertaintySet(1.0, [0.0], [[1.0]])


def test_order_floor():
    assert relaxation_order_floor(4) == 2
    assert relaxation_order_floor(1) == 1
    assert relaxation_order_floor(5) == 3
    assert relaxation_order_floor(0) == 1


def test_uncertainty_set_validation():
    with pytest.raises(NotPositiveDefinite):
        UncertaintySet(1.0, [0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(ValueError):
        UncertaintySet(-1.0, [0.0], [[1.0]])


def test_toy_primal_value():
    prog = build_primal_relaxation([1.0], TOY_PC, DecisionSet(), UNIT, 1)
    sol = solve(prog)
    assert abs(sol.pobj - 1) < 1e-7
    assert abs(sol.primal["x"][0] - 1) < 1e-7


def test_toy_dual_value_and_moments():
    prog = build_dual_relaxation([1.0], TOY_PC, DecisionSet(), UNIT, 1)
    sol = solve(prog)
    assert abs(-sol.pobj - 1) < 1e-7
    z = sol.primal["z"]
    assert np.allclose(z[:2], [1.0, 1.0], atol=1e-6)


def test_toy_certified():
    rep = solve_linear_cco([1.0], TOY_PC, DecisionSet(), UNIT)
    assert rep.certified and rep.k_used == 1 and rep.flat_t == 1
    assert abs(rep.fstar - 1) < 1e-7 and abs(rep.xstar[0] - 1) < 1e-7
    assert np.allclose(rep.dual_y.entries, [1.0, 1.0], atol=1e-6)


def test_toy_normalized_and_raw_agree():
    a = solve_linear_cco([1.0], TOY_PC, DecisionSet(), UncertaintySet(2.0, [0.5], [[3.0]]))
    b = solve_linear_cco([1.0], TOY_PC, DecisionSet(), UncertaintySet(2.0, [0.5], [[3.0]]),
                         SolveOptions(normalize=False))
    assert abs(a.fstar - b.fstar) < 1e-6
    assert abs(a.fstar - (0.5 + math.sqrt(6.0))) < 1e-6
    assert np.allclose(a.dual_y.entries, b.dual_y.entries, atol=1e-5)


def test_constant_in_xi_reduces_to_linear():
    pc = PerturbedConstraint.from_terms([([2.0], 0.0, (0,))], 1, 1)
    X = DecisionSet(linear_ineqs=[(np.array([1.0]), -5.0)])
    rep = solve_linear_cco([1.0], pc, X, UNIT)
    # the value is exact, but higher moments of the dual are unconstrained,
    # so an interior-point answer need not be flat
    assert abs(rep.fstar) < 1e-7 and rep.gap < 1e-7
    assert rep.status in ("certified", "max-order-reached")


def test_empty_decision_set_is_infeasible():
    X = DecisionSet(linear_ineqs=[(np.array([1.0]), 2.0), (np.array([-1.0]), -1.0)])  # x >= 2, x <= 1
    rep = solve_linear_cco([1.0], TOY_PC, X, UNIT)
    assert rep.status == "infeasible"
    assert solve(build_dual_relaxation([1.0], TOY_PC, X, UNIT, 1)).status == "dual-infeasible"


def test_unbounded_reported():
    rep = solve_linear_cco([-1.0], TOY_PC, DecisionSet(), UNIT)
    assert rep.status == "relaxation-unbounded"


def test_sosconvex_toy():
    x = Poly.variable(1, 0)
    rep = solve_sosconvex_cco(x ** 2, TOY_PC, DecisionSet(poly_ineqs=[4 - x ** 2]), UNIT)
    assert rep.certified
    assert abs(rep.fstar - 1) < 1e-6 and abs(rep.xstar[0] - 1) < 1e-6
    assert np.allclose(rep.w.entries, [1, 1, 1], atol=1e-5)


def test_projection_of_dirac():
    t = np.array([0.3, -1.2, 2.0])
    assert np.allclose(project_moments(tms_of_point(t, 4), 3), t)


def test_min_on_U_examples():
    xi = Poly.variable(1, 0)
    assert abs(min_on_U(xi ** 2, UNIT, 1)[0]) < 1e-7
    assert abs(min_on_U(1 - xi ** 2, UNIT, 1)[0]) < 1e-7
    g, v, flat = min_on_U(xi, UNIT, 1)
    assert abs(g + 1) < 1e-7
    assert flat and abs(v.entries[1] + 1) < 1e-5


def test_quartic_linear_example(fixture_problem):
    pf = fixture_problem("ex6.3")
    rep = solve_linear_cco(pf.objective_vector(), pf.perturbed_constraint(), pf.decision(), pf.uncertainty(1.5387),
                           SolveOptions(cross_check=True))
    assert rep.certified and rep.k_used == 2
    assert abs(rep.fstar - (-1.6382)) <= 1e-2 * (1 + 1.6382)
    assert abs(rep.dual_check - rep.fsos) <= 1e-5 * (1 + abs(rep.fsos))


def test_digit_transposed_gamma_matches_reference_optimum(fixture_problem):
    # the reference optimizer of the LMI example belongs to Gamma = 1.2963
    pf = fixture_problem("ex6.4")
    rep = solve_linear_cco(pf.objective_vector(), pf.perturbed_constraint(), pf.decision(), pf.uncertainty(1.2963))
    assert rep.certified
    assert abs(rep.fstar - 0.7784) < 5e-3
    assert np.max(np.abs(rep.xstar - [5.1776, -2.0061, 0.4772, -1.8185])) < 2e-2


def test_exponential_example_at_matching_gamma(fixture_problem):
    # the reference optimum of the exponential example is attained at Gamma ~ 0.694
    pf = fixture_problem("ex6.5")
    rep = solve_linear_cco(pf.objective_vector(), pf.perturbed_constraint(), pf.decision(), pf.uncertainty(0.69394))
    assert rep.certified
    assert abs(rep.fstar - (-3.5249)) < 1e-3
    assert np.max(np.abs(rep.xstar - [0.7656, 0.5576, -0.3208])) < 5e-3


def test_sosconvex_example_jensen_and_dual(fixture_problem):
    pf = fixture_problem("ex6.8")
    f = pf.objective_poly()
    rep = solve_sosconvex_cco(f, pf.perturbed_constraint(), pf.decision(), pf.uncertainty(0.2918),
                              SolveOptions(cross_check=True))
    assert rep.certified
    assert abs(rep.fstar - (-8.2948)) < 1e-3
    for u in pf.decision().poly_ineqs:
        assert poly_eval(u, rep.xstar) >= -1e-6
    assert rep.fstar <= rep.lifted_value + 1e-6 * (1 + abs(rep.fstar))
    assert abs(rep.dual_check - rep.fsos) <= 1e-5 * (1 + abs(rep.fsos))


@pytest.mark.parametrize("fid,gamma", [("ex6.3", 1.5387), ("ex6.6", 0.7548), ("portfolio", 0.5703)])
def test_weak_duality_and_monotone_in_order(fixture_problem, fid, gamma):
    pf = fixture_problem(fid)
    pc, X, U, c = pf.perturbed_constraint(), pf.decision(), pf.uncertainty(gamma), pf.objective_vector()
    k0 = relaxation_order_floor(pc.d)
    vals = []
    for k in (k0, k0 + 1):
        p = solve(build_primal_relaxation(c, pc, X, U, k))
        d = solve(build_dual_relaxation(c, pc, X, U, k))
        fsos, fmom = p.pobj, -d.pobj
        assert fmom <= fsos + 1e-5 * (1 + abs(fsos))
        vals.append(fsos)
    assert vals[1] <= vals[0] + 1e-5 * (1 + abs(vals[0]))


@settings(max_examples=6, deadline=None)
@given(st.floats(0.3, 3.0), st.floats(1.01, 2.0))
def test_monotone_in_gamma(g, factor):
    pc = PerturbedConstraint.from_terms([([1.0, 0.0], 0.0, (0, 0)), ([0.0, 1.0], -1.0, (1, 0)),
                                         (None, -1.0, (0, 2)), ([0.0, 0.5], 0.0, (2, 0))], 2, 2)
    X = DecisionSet(linear_ineqs=[(np.array([0.0, 1.0]), 0.0), (np.array([0.0, -1.0]), -1.0)])
    U = UncertaintySet(g, [0.2, -0.1], [[1.0, 0.3], [0.3, 0.8]])
    a = solve_linear_cco([1.0, 0.0], pc, X, U)
    b = solve_linear_cco([1.0, 0.0], pc, X, U.with_gamma(g * factor))
    assert a.certified and b.certified
    assert b.fstar >= a.fstar - 1e-6 * (1 + abs(a.fstar))


@pytest.mark.parametrize("fid,gamma", [("ex6.6", 0.7548), ("ex6.7", 3.2416)])
def test_certified_solutions_pass_checks(fixture_problem, fid, gamma):
    pf = fixture_problem(fid)
    pc, U = pf.perturbed_constraint(), pf.uncertainty(gamma)
    if pf.sos_convex:
        rep = solve_sosconvex_cco(pf.objective_poly(), pc, pf.decision(), U)
    else:
        rep = solve_linear_cco(pf.objective_vector(), pc, pf.decision(), U)
    chk = certify_solution(pc, U, rep)
    assert chk["ok"], chk


def test_perturbed_constraint_trims_and_evaluates():
    pc = PerturbedConstraint.from_terms([([1.0, 2.0], 1.0, (0, 0)), ([0.0, 0.0], 0.0, (3, 0))], 2, 2)
    assert pc.d == 0
    assert np.allclose(pc.evaluate([1.0, 1.0], [[5.0, 5.0]]), [4.0])
