"""Random-vector models, set sizing from samples, violation estimates.

The sizing loop bisects the radius ``Gamma`` of the ellipsoid between 0 and
an order-statistic upper bound on the ``(1 - eps)``-quantile of the
Mahalanobis form, until the Monte Carlo violation probability of the robust
solution is within ``rho`` of ``eps``.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import gammaln

from .kernels import eval_monomials
from .polycore import monomial_basis

log = logging.getLogger(__name__)

FAMILIES = ("gaussian", "uniform", "exponential", "beta", "gamma", "chi-squared", "lognormal", "student-t")
KINDS = ("product", "joint-gaussian", "joint-t", "empirical")


class ModelError(ValueError):
    pass


class UndefinedMoments(ModelError):
    pass


class QuantileUnsolvable(ValueError):
    pass


# ---------------------------------------------------------------------------
# models

_REQUIRED = {
    "gaussian": ("loc", "scale"),
    "uniform": ("a", "b"),
    "exponential": ("scale",),
    "beta": ("a", "b"),
    "gamma": ("shape", "scale"),
    "chi-squared": ("df",),
    "lognormal": ("mu", "sigma"),
    "student-t": ("df",),
}
_DEFAULTS = {"gaussian": {"loc": 0.0, "scale": 1.0}, "student-t": {"loc": 0.0, "scale": 1.0}}


@dataclass
class Component:
    """One univariate factor of a product model.

    ``exponential`` takes a scale (mean), not a rate.  ``gaussian`` and
    ``student-t`` take ``loc`` and ``scale`` (standard deviation for the
    Gaussian, scale factor for the t).
    """

    family: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ModelError(f"unknown distribution family {self.family!r}; known: {', '.join(FAMILIES)}")
        p = dict(_DEFAULTS.get(self.family, {}))
        p.update({k: float(v) for k, v in self.params.items()})
        missing = [k for k in _REQUIRED[self.family] if k not in p]
        if missing:
            raise ModelError(f"{self.family} needs parameter(s) {', '.join(missing)}")
        extra = set(p) - set(_REQUIRED[self.family]) - set(_DEFAULTS.get(self.family, {}))
        if extra:
            raise ModelError(f"{self.family} does not take {', '.join(sorted(extra))}")
        self.params = p
        self._validate()

    def _validate(self):
        p, f = self.params, self.family
        pos = {"gaussian": ["scale"], "exponential": ["scale"], "beta": ["a", "b"],
               "gamma": ["shape", "scale"], "chi-squared": ["df"], "lognormal": ["sigma"],
               "student-t": ["df", "scale"]}.get(f, [])
        for k in pos:
            if not p[k] > 0:
                raise ModelError(f"{f} parameter {k} must be positive, got {p[k]}")
        if f == "uniform" and not p["b"] > p["a"]:
            raise ModelError(f"uniform needs a < b, got a={p['a']}, b={p['b']}")

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        p, f = self.params, self.family
        if f == "gaussian":
            return rng.normal(p["loc"], p["scale"], n)
        if f == "uniform":
            return rng.uniform(p["a"], p["b"], n)
        if f == "exponential":
            return rng.exponential(p["scale"], n)
        if f == "beta":
            return rng.beta(p["a"], p["b"], n)
        if f == "gamma":
            return rng.gamma(p["shape"], p["scale"], n)
        if f == "chi-squared":
            return rng.chisquare(p["df"], n)
        if f == "lognormal":
            return rng.lognormal(p["mu"], p["sigma"], n)
        return p["loc"] + p["scale"] * rng.standard_t(p["df"], n)

    def moments(self):
        p, f = self.params, self.family
        if f == "gaussian":
            return p["loc"], p["scale"] ** 2
        if f == "uniform":
            return 0.5 * (p["a"] + p["b"]), (p["b"] - p["a"]) ** 2 / 12.0
        if f == "exponential":
            return p["scale"], p["scale"] ** 2
        if f == "beta":
            a, b = p["a"], p["b"]
            return a / (a + b), a * b / ((a + b) ** 2 * (a + b + 1))
        if f == "gamma":
            return p["shape"] * p["scale"], p["shape"] * p["scale"] ** 2
        if f == "chi-squared":
            return p["df"], 2 * p["df"]
        if f == "lognormal":
            m, s2 = p["mu"], p["sigma"] ** 2
            return math.exp(m + s2 / 2), (math.exp(s2) - 1) * math.exp(2 * m + s2)
        if p["df"] <= 2:
            raise UndefinedMoments(f"student-t with df={p['df']} has no finite variance")
        return p["loc"], p["scale"] ** 2 * p["df"] / (p["df"] - 2)


def _pd_check(M, name):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1] or not np.allclose(M, M.T):
        raise ModelError(f"{name} must be a symmetric matrix")
    if np.linalg.eigvalsh(M)[0] <= 0:
        raise ModelError(f"{name} must be positive definite")
    return M


@dataclass
class RandomModel:
    kind: str
    components: List[Component] = field(default_factory=list)
    loc: Optional[np.ndarray] = None
    scale: Optional[np.ndarray] = None
    df: Optional[float] = None
    samples: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ModelError(f"unknown model kind {self.kind!r}; known: {', '.join(KINDS)}")
        if self.kind == "product":
            if not self.components:
                raise ModelError("product model needs at least one component")
            self.components = [c if isinstance(c, Component) else Component(c[0], c[1])
                               for c in self.components]
        elif self.kind in ("joint-gaussian", "joint-t"):
            if self.loc is None or self.scale is None:
                raise ModelError(f"{self.kind} needs loc and scale")
            self.loc = np.asarray(self.loc, dtype=float).ravel()
            self.scale = _pd_check(self.scale, "scale matrix")
            if self.scale.shape[0] != self.loc.shape[0]:
                raise ModelError("loc and scale sizes differ")
            if self.kind == "joint-t" and not (self.df is not None and self.df > 0):
                raise ModelError("joint-t needs a positive df")
        else:
            if self.samples is None:
                raise ModelError("empirical model needs samples")
            self.samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
            if self.samples.shape[0] < 2:
                raise ModelError("empirical model needs at least two samples")

    @property
    def r(self) -> int:
        if self.kind == "product":
            return len(self.components)
        if self.kind == "empirical":
            return self.samples.shape[1]
        return self.loc.shape[0]

    @classmethod
    def product(cls, *components) -> "RandomModel":
        return cls("product", [c if isinstance(c, Component) else Component(*c) for c in components])


def sample(model: RandomModel, n: int, seed: int) -> np.ndarray:
    """``n`` i.i.d. rows; deterministic in ``(model, n, seed)``."""
    if n < 1:
        raise ValueError("sample size must be positive")
    rng = np.random.default_rng(seed)
    if model.kind == "product":
        return np.column_stack([c.draw(rng, n) for c in model.components])
    if model.kind == "empirical":
        return model.samples[rng.integers(0, model.samples.shape[0], n)]
    L = np.linalg.cholesky(model.scale)
    z = rng.standard_normal((n, model.r)) @ L.T
    if model.kind == "joint-t":
        w = rng.chisquare(model.df, n) / model.df
        z = z / np.sqrt(w)[:, None]
    return model.loc + z


def moments_of(model: RandomModel):
    """Mean vector and covariance matrix (sample moments for empirical models)."""
    if model.kind == "product":
        ms = [c.moments() for c in model.components]
        return np.array([m for m, _ in ms]), np.diag([v for _, v in ms])
    if model.kind == "empirical":
        return model.samples.mean(axis=0), np.atleast_2d(np.cov(model.samples, rowvar=False))
    if model.kind == "joint-gaussian":
        return model.loc.copy(), model.scale.copy()
    if model.df <= 2:
        raise UndefinedMoments(f"joint-t with df={model.df} has no finite covariance")
    return model.loc.copy(), model.df / (model.df - 2) * model.scale


# ---------------------------------------------------------------------------
# quantile bound


def gamma_value(mu, Lambda, xi) -> np.ndarray:
    """``(xi - mu)^T Lambda^{-1} (xi - mu)`` per row of ``xi`` via a Cholesky solve."""
    mu = np.asarray(mu, dtype=float).ravel()
    Lambda = np.atleast_2d(np.asarray(Lambda, dtype=float))
    try:
        L = np.linalg.cholesky(Lambda)
    except np.linalg.LinAlgError:
        raise ModelError("Lambda is not positive definite") from None
    if np.min(np.diag(L)) ** 2 <= 1e-12 * max(1.0, np.max(np.diag(Lambda))):
        raise ModelError("Lambda is singular within tolerance")
    pts = np.asarray(xi, dtype=float)
    single = pts.ndim == 1
    w = solve_triangular(L, (np.atleast_2d(pts) - mu).T, lower=True)
    out = np.sum(w * w, axis=0)
    return out[0] if single else out


def binomial_upper_tail(N: int, p: float) -> np.ndarray:
    """``T[L] = P(Bin(N, p) >= L)`` for ``L = 0..N+1`` (log-space terms, compensated sums)."""
    i = np.arange(N + 1)
    with np.errstate(divide="ignore"):
        logt = (gammaln(N + 1) - gammaln(i + 1) - gammaln(N - i + 1)
                + i * np.log(p) + (N - i) * np.log1p(-p))
    terms = np.exp(logt)
    tail = np.zeros(N + 2)
    s = c = 0.0
    for L in range(N, -1, -1):
        # Neumaier summation from the top term down
        t = s + terms[L]
        c += (s - t) + terms[L] if abs(s) >= terms[L] else (terms[L] - t) + s
        s = t
        tail[L] = s + c
    return tail


def quantile_index(N: int, eps: float, beta: float) -> Optional[int]:
    """Smallest ``L <= N`` with ``sum_{i<L} C(N,i) (1-eps)^i eps^(N-i) >= 1 - beta``.

    Evaluated as ``P(Bin(N, 1-eps) >= L) <= beta``; ``None`` when no such
    ``L`` exists.  A relative slack of 1e-12 absorbs rounding at exact ties.
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if not 0 <= beta < 1:
        raise ValueError("beta must lie in [0, 1)")
    if N < 1:
        raise ValueError("N must be positive")
    tail = binomial_upper_tail(N, 1.0 - eps)
    ok = np.flatnonzero(tail[1:N + 1] <= beta * (1 + 1e-12))
    return int(ok[0]) + 1 if ok.size else None


def minimal_sample_size(eps: float, beta: float, limit: int = 100000) -> int:
    """Smallest ``N`` for which :func:`quantile_index` is solvable."""
    # solvable iff (1-eps)^N <= beta; confirm with the index itself near the boundary
    guess = max(1, int(math.floor(math.log(beta) / math.log1p(-eps))) - 2)
    for N in range(guess, limit + 1):
        if quantile_index(N, eps, beta) is not None:
            return N
    raise QuantileUnsolvable(f"no N up to {limit}")


def initial_gamma(samples, mu, Lambda, eps: float, beta: float):
    """``(Gamma_1, L*)``: the ``L*``-th smallest Mahalanobis value of the samples."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    N = samples.shape[0]
    L = quantile_index(N, eps, beta)
    if L is None:
        raise QuantileUnsolvable(f"no order statistic of {N} samples bounds the {1 - eps} quantile "
                                 f"at confidence {1 - beta}")
    g = np.sort(gamma_value(mu, Lambda, samples), kind="stable")
    return float(g[L - 1]), L


# ---------------------------------------------------------------------------
# violation probability


class ViolationEstimator:
    """Counts ``h(x, zeta_i) < 0`` over a fixed evaluation set.

    Monomial values are computed once, for the monomials that carry a
    nonzero coefficient, so each estimate is a single matrix-vector product.
    """

    def __init__(self, pc, samples):
        samples = np.atleast_2d(np.asarray(samples, dtype=float))
        if samples.shape[1] != pc.r:
            raise ValueError(f"samples have {samples.shape[1]} columns, expected {pc.r}")
        self.pc = pc
        self.support = np.flatnonzero(np.any(pc.A != 0, axis=1) | (pc.b != 0))
        exps = monomial_basis(pc.r, pc.d).array[self.support]
        self.V = eval_monomials(samples, exps)
        self.n = samples.shape[0]

    def values(self, x) -> np.ndarray:
        coef = self.pc.A[self.support] @ np.asarray(x, dtype=float) + self.pc.b[self.support]
        return self.V @ coef

    def count(self, x) -> int:
        return int(np.count_nonzero(self.values(x) < 0))

    def __call__(self, x) -> float:
        return self.count(x) / self.n


def estimate_pvio(pc, x, samples) -> float:
    return ViolationEstimator(pc, samples)(x)


# ---------------------------------------------------------------------------
# sizing loop


@dataclass
class SizingReport:
    gamma_star: float
    trace: List[dict]
    loops: int
    initial_gamma: float
    lstar: int
    status: str                      # converged | max-loops
    beta_doublings: int = 0
    beta_used: float = float("nan")
    f_initial: float = float("nan")
    p_initial: float = float("nan")
    fstar: float = float("nan")
    xstar: Optional[np.ndarray] = None
    pvio: float = float("nan")

    @property
    def status_label(self) -> str:
        if self.beta_doublings:
            return f"{self.status}; beta-doubled({self.beta_doublings})"
        return self.status


def _unpack(res):
    """Accept a report-like object or an ``(x, f)`` pair from the solver callback."""
    if isinstance(res, tuple):
        return np.asarray(res[0], dtype=float), float(res[1])
    return np.asarray(res.xstar, dtype=float), float(res.fstar)


def size_uncertainty_set(pc, model: RandomModel, eps: float, beta: float, rho: float, N: int,
                         Nhat: int, seed: int, solver: Callable[[float], object],
                         mu=None, Lambda=None, max_loops: int = 60, max_doublings: int = 10,
                         progress: Optional[Callable[[dict], None]] = None) -> SizingReport:
    """Bisection on ``Gamma`` until ``|p_vio(x*(Gamma)) - eps| <= rho``.

    ``N + Nhat`` samples are drawn once from ``model`` with ``seed``; the
    first ``N`` size the initial set, the rest estimate violation
    probabilities.  ``mu``/``Lambda`` default to the model's moments.
    ``solver(Gamma)`` returns a report with ``xstar``/``fstar`` or a pair.
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if mu is None or Lambda is None:
        m0, L0 = moments_of(model)
        mu = m0 if mu is None else mu
        Lambda = L0 if Lambda is None else Lambda
    draws = sample(model, N + Nhat, seed)
    xi, zeta = draws[:N], draws[N:]
    doublings = 0
    b = beta
    while quantile_index(N, eps, b) is None:
        doublings += 1
        if doublings > max_doublings:
            raise QuantileUnsolvable(f"quantile index unsolvable for N={N} after {max_doublings} doublings of beta")
        b = min(2 * b, 1 - 1e-12)
    gamma1, lstar = initial_gamma(xi, mu, Lambda, eps, b)
    if not gamma1 > 0:
        raise ValueError("initial set size is zero; samples collapse onto the mean")
    pv = ViolationEstimator(pc, zeta)
    lo, hi = 0.0, gamma1
    G = gamma1
    trace: List[dict] = []
    status = "max-loops"
    rep = SizingReport(gamma1, trace, 0, gamma1, lstar, status, doublings, b)
    for loop in range(1, max_loops + 1):
        x, f = _unpack(solver(G))
        p = pv(x)
        entry = {"loop": loop, "gamma": G, "f": f, "pvio": p, "gamma_lo": lo, "gamma_hi": hi,
                 "x": x.tolist()}
        trace.append(entry)
        if progress is not None:
            progress(entry)
        log.debug("loop %d gamma=%.6g f=%.6g pvio=%.6g", loop, G, f, p)
        if loop == 1:
            rep.f_initial, rep.p_initial = f, p
        if abs(p - eps) <= rho:
            status = "converged"
            rep.gamma_star, rep.fstar, rep.xstar, rep.pvio = G, f, x, p
            break
        if p < eps:
            hi = G
        else:
            lo = G
            if G >= hi:
                # the initial size was unsuitable; widen the bracket
                hi = 2 * G
        G = 0.5 * (lo + hi)
    rep.loops = len(trace)
    rep.status = status
    if status != "converged":
        feas = [t for t in trace if t["pvio"] <= eps]
        pick = max(feas, key=lambda t: (t["pvio"], -t["gamma"])) if feas else trace[-1]
        rep.gamma_star, rep.fstar, rep.pvio = pick["gamma"], pick["f"], pick["pvio"]
        rep.xstar = np.asarray(pick["x"])
    return rep


# ---------------------------------------------------------------------------
# CSV


def load_samples_csv(path) -> np.ndarray:
    """One sample per row; a non-numeric first row is taken as a header."""
    rows = []
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                if i == 0 and not rows:
                    continue
                raise ModelError(f"{path}: line {i + 1}: non-numeric entry") from None
    if not rows:
        raise ModelError(f"{path}: no samples")
    width = {len(r) for r in rows}
    if len(width) != 1:
        raise ModelError(f"{path}: rows have differing lengths {sorted(width)}")
    return np.array(rows)


def dump_samples_csv(path, samples, header: Optional[Sequence[str]] = None) -> None:
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if header is not None:
            w.writerow(list(header))
        for row in samples:
            w.writerow([repr(float(v)) for v in row])
