import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from ccorobust.robustsolve import PerturbedConstraint
from ccorobust.uncertainkit import (Component, ModelError, QuantileUnsolvable, RandomModel, UndefinedMoments,
                                    ViolationEstimator, binomial_upper_tail, dump_samples_csv, estimate_pvio,
                                    gamma_value, initial_gamma, load_samples_csv, minimal_sample_size,
                                    moments_of, quantile_index, sample, size_uncertainty_set)
from oracles import exact_quantile_index

SHIFT = PerturbedConstraint.from_terms([([1.0], 0.0, (0,)), (None, -1.0, (1,))], 1, 1)  # h = x - xi


def test_gaussian_sample_mean():
    mu = np.array([1.0, -2.0, 0.5])
    Lam = np.array([[2, 1, 0.5], [1, 2, 0.4], [0.5, 0.4, 3]])
    n = 100000
    X = sample(RandomModel("joint-gaussian", loc=mu, scale=Lam), n, 3)
    assert np.all(np.abs(X.mean(axis=0) - mu) <= 4 * np.sqrt(np.diag(Lam) / n))


def test_empirical_frequencies():
    rows = np.array([[0.0, 1.0], [2.0, 3.0], [4.0, 5.0]])
    X = sample(RandomModel("empirical", samples=rows), 300000, 0)
    freq = [np.mean(X[:, 0] == r[0]) for r in rows]
    assert np.allclose(freq, 1 / 3, atol=0.01)


def test_uniform_support_and_moments():
    m = RandomModel.product(*[("uniform", {"a": 0, "b": 2})] * 3)
    X = sample(m, 10000, 1)
    assert X.min() >= 0 and X.max() <= 2
    mu, Lam = moments_of(m)
    assert np.allclose(mu, 1) and np.allclose(Lam, np.eye(3) / 3)


def test_t_scale_moments():
    Lb = np.array([[4, 2, 0, 1], [2, 3, 0, 1], [0, 0, 2, 3], [1, 1, 3, 6.0]])
    mu, Lam = moments_of(RandomModel("joint-t", loc=[1, 1, 2, 3], scale=Lb, df=4))
    assert np.allclose(Lam, 2 * Lb)


def test_lognormal_and_beta_moments():
    mu, Lam = moments_of(RandomModel.product(("lognormal", {"mu": 0, "sigma": 1}), ("lognormal", {"mu": -1, "sigma": 1}),
                                             ("beta", {"a": 2, "b": 2})))
    e = math.e
    assert np.allclose(mu[:2], [math.sqrt(e), 1 / math.sqrt(e)])
    assert np.allclose(np.diag(Lam), [e * e - e, 1 - 1 / e, 1 / 20])


def test_exponential_takes_scale():
    mu, Lam = moments_of(RandomModel.product(("exponential", {"scale": 1}), ("exponential", {"scale": 2})))
    assert np.allclose(mu, [1, 2]) and np.allclose(np.diag(Lam), [1, 4])


def test_model_errors():
    with pytest.raises(ModelError):
        Component("cauchy", {})
    with pytest.raises(ModelError):
        Component("uniform", {"a": 1})
    with pytest.raises(UndefinedMoments):
        moments_of(RandomModel.product(("student-t", {"df": 2})))
    with pytest.raises(ModelError):
        RandomModel("joint-gaussian", loc=[0, 0], scale=[[1, 2], [2, 1]])


def test_gamma_value_examples():
    mu = np.array([0.0676, 0.0132])
    Lam = np.array([[0.9887, -0.0057], [-0.0057, 0.9848]])
    assert gamma_value(mu, Lam, mu) == 0
    d = np.array([1.0, 0.0]) - mu
    assert abs(gamma_value(mu, Lam, [1.0, 0.0]) - d @ np.linalg.solve(Lam, d)) < 1e-14
    x = np.array([[1.0, 2.0, -1.0]])
    assert gamma_value(np.zeros(3), np.eye(3), x)[0] == 6.0


def test_quantile_examples():
    assert quantile_index(59, 0.05, 0.05) == 59
    assert quantile_index(58, 0.05, 0.05) is None
    assert quantile_index(90, 0.05, 0.01) is not None
    assert quantile_index(89, 0.05, 0.01) is None
    assert quantile_index(3, 0.5, 0.5) == 2


@pytest.mark.parametrize("N", [1, 5, 30, 59, 100, 299, 500])
@pytest.mark.parametrize("eps,beta", [(0.05, 0.05), (0.01, 0.01), (0.25, 0.05), (0.5, 0.5), (0.1, 0.2)])
def test_quantile_matches_exact_arithmetic(N, eps, beta):
    assert quantile_index(N, eps, beta) == exact_quantile_index(N, eps, beta)


def test_binomial_tail_survives_large_N():
    t = binomial_upper_tail(10000, 0.95)
    assert abs(t[0] - 1) < 1e-10 and np.all(np.diff(t) <= 1e-12)


def test_minimal_sizes():
    assert minimal_sample_size(0.05, 0.05) == 59
    assert minimal_sample_size(0.01, 0.01) == 459


@settings(max_examples=60, deadline=None)
@given(st.integers(60, 400), st.floats(0.02, 0.3), st.floats(0.01, 0.3), st.floats(1.0, 1.5), st.floats(0.3, 1.0))
def test_quantile_monotone(N, eps, beta, eps_up, beta_down):
    L = quantile_index(N, eps, beta)
    if L is None:
        return
    L2 = quantile_index(N, min(eps * eps_up, 0.99), beta)
    assert L2 is not None and L2 <= L
    L3 = quantile_index(N, eps, beta * beta_down)
    if L3 is not None:
        assert L3 >= L


def test_initial_gamma_examples():
    mu = np.zeros(2)
    g, L = initial_gamma(np.zeros((100, 2)), mu, np.eye(2), 0.05, 0.05)
    assert g == 0
    pts = np.array([[2.0], [1.0], [3.0]])  # Gamma values 4, 1, 9
    assert initial_gamma(pts, [0.0], [[1.0]], 0.5, 0.5) == (4.0, 2)
    with pytest.raises(QuantileUnsolvable):
        initial_gamma(pts, [0.0], [[1.0]], 0.05, 0.05)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(1.0, 2.0))
def test_initial_gamma_covers_L_samples(seed, grow):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(120, 2))
    g, L = initial_gamma(X, np.zeros(2), np.eye(2), 0.1, 0.05)
    assert np.sum(gamma_value(np.zeros(2), np.eye(2), X) <= g * grow) >= L


def test_pvio_examples():
    one = PerturbedConstraint.from_terms([(None, 1.0, (0,))], 1, 1)
    neg = PerturbedConstraint.from_terms([(None, -1.0, (0,))], 1, 1)
    X = np.random.default_rng(0).normal(size=(1000, 1))
    assert estimate_pvio(one, [0.0], X) == 0.0
    assert estimate_pvio(neg, [0.0], X) == 1.0
    Z = sample(RandomModel("joint-gaussian", loc=[0.0], scale=[[1.0]]), 1000000, 5)
    assert abs(estimate_pvio(SHIFT, [0.0], Z) - 0.5) <= 0.002


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_pvio_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(500, 1))
    x = [rng.normal()]
    assert estimate_pvio(SHIFT, x, X) == estimate_pvio(SHIFT, x, X[rng.permutation(500)])


def _shift_solver(G):
    # closed form for min x s.t. x >= xi on [-sqrt(G), sqrt(G)]
    return np.array([math.sqrt(G)]), math.sqrt(G)


def test_sizing_synthetic_closed_form():
    model = RandomModel("joint-gaussian", loc=[0.0], scale=[[1.0]])
    rep = size_uncertainty_set(SHIFT, model, 0.05, 0.05, 1e-6, 100, 200000, 7, _shift_solver)
    assert rep.status == "converged"
    assert abs(rep.gamma_star - norm.ppf(0.95) ** 2) < 0.05
    assert abs(rep.pvio - 0.05) <= 1e-6
    # the bracket always holds the terminal value, and lo < hi
    for t in rep.trace:
        assert t["gamma_lo"] < t["gamma_hi"]


def test_sizing_stops_at_first_loop():
    model = RandomModel("joint-gaussian", loc=[0.0], scale=[[1.0]])
    rep = size_uncertainty_set(SHIFT, model, 0.5, 0.05, 1.0, 100, 1000, 0, _shift_solver)
    assert rep.loops == 1 and rep.gamma_star == rep.initial_gamma


def test_sizing_doubles_beta_when_needed():
    model = RandomModel("joint-gaussian", loc=[0.0], scale=[[1.0]])
    rep = size_uncertainty_set(SHIFT, model, 0.05, 0.01, 1e-3, 60, 20000, 0, _shift_solver)
    assert rep.beta_doublings >= 1 and "beta-doubled" in rep.status_label
    with pytest.raises(QuantileUnsolvable):
        size_uncertainty_set(SHIFT, model, 0.01, 1e-9, 1e-3, 5, 100, 0, _shift_solver, max_doublings=2)


def test_sizing_deterministic_given_seed():
    model = RandomModel("joint-gaussian", loc=[0.0], scale=[[1.0]])
    a = size_uncertainty_set(SHIFT, model, 0.1, 0.05, 1e-4, 100, 50000, 11, _shift_solver)
    b = size_uncertainty_set(SHIFT, model, 0.1, 0.05, 1e-4, 100, 50000, 11, _shift_solver)
    assert a.trace == b.trace


def test_csv_roundtrip(tmp_path):
    X = np.random.default_rng(2).normal(size=(20, 3))
    p = tmp_path / "s.csv"
    dump_samples_csv(p, X, header=["a", "b", "c"])
    assert np.array_equal(load_samples_csv(p), X)
    p.write_text("1,2\n3\n")
    with pytest.raises(ModelError):
        load_samples_csv(p)


def test_estimator_rejects_wrong_width():
    with pytest.raises(ValueError):
        ViolationEstimator(SHIFT, np.zeros((4, 2)))
