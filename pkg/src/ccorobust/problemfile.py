"""JSON problem files for chance-constrained instances.

Layout (all sections but ``decision_set``, ``random``, ``sizing``,
``solver`` and ``reference`` are required)::

    {
      "id": "ex6.3",
      "decision": {"n": 3, "names": ["x1", "x2", "x3"]},
      "objective": {"linear": [2, 3, 1]}
                 | {"poly": [{"c": 4, "e": [4, 0]}, ...], "sos_convex": true},
      "chance": {"r": 3, "terms": [{"a": [-3, 2, 0], "b": 0, "alpha": [4, 0, 0]}, ...]},
      "decision_set": {"linear_ineqs": [{"a": [...], "c": -4}],   # a^T x >= c
                       "linear_eqs": [{"a": [...], "c": 1}],
                       "lmi": [{"F0": [[...]], "F": [[[...]], ...]}],  # F0 + sum x_j F_j >= 0
                       "poly_ineqs": [[{"c": 8, "e": [0, 0]}, ...]]},  # u(x) >= 0
      "random": {"model": {"kind": "product", "components": [{"family": "uniform", "a": 0, "b": 2}]},
                 "mu": [...], "Lambda": [[...]]},
      "risk": {"eps": 0.25},
      "sizing": {"beta": 0.05, "rho": 1e-6, "N": 100, "Nhat": 1000000, "seed": 0},
      "solver": {"gap_tol": 1e-6, "cert_tol": 1e-6, "k_max": null},
      "reference": {...}
    }

Empirical models name a CSV file (``"csv": "samples.csv"``) resolved
relative to the problem file.
"""
from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .polycore import Poly
from .robustsolve import DecisionSet, PerturbedConstraint, UncertaintySet
from .uncertainkit import FAMILIES, Component, ModelError, RandomModel, load_samples_csv, moments_of

SIZING_DEFAULTS = {"beta": 0.05, "rho": 1e-6, "N": 100, "Nhat": 1000000, "seed": 0}
SOLVER_DEFAULTS = {"gap_tol": 1e-6, "cert_tol": 1e-6, "k_max": None}


class ProblemError(ValueError):
    """Validation failure; ``diagnostics`` lists ``field: message`` strings."""

    def __init__(self, diagnostics: List[str]):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))


@dataclass
class ProblemFile:
    id: str
    n: int
    names: List[str]
    objective: dict
    r: int
    terms: List[dict]
    decision_set: dict
    random: dict
    eps: float
    sizing: dict = field(default_factory=lambda: dict(SIZING_DEFAULTS))
    solver: dict = field(default_factory=lambda: dict(SOLVER_DEFAULTS))
    reference: dict = field(default_factory=dict)
    base_dir: str = field(default=".", compare=False)

    # -- derived objects ---------------------------------------------------
    @property
    def sos_convex(self) -> bool:
        return "poly" in self.objective

    def objective_vector(self) -> np.ndarray:
        return np.asarray(self.objective["linear"], dtype=float)

    def objective_poly(self) -> Poly:
        if "poly" in self.objective:
            return _poly(self.n, self.objective["poly"])
        c = self.objective_vector()
        terms = {tuple(1 if j == i else 0 for j in range(self.n)): float(c[i]) for i in range(self.n)}
        return Poly(self.n, terms)

    def perturbed_constraint(self) -> PerturbedConstraint:
        return PerturbedConstraint.from_terms(
            [(t.get("a"), float(t.get("b", 0.0)), tuple(t["alpha"])) for t in self.terms], self.r, self.n)

    @property
    def d(self) -> int:
        return max(sum(t["alpha"]) for t in self.terms)

    def decision(self) -> DecisionSet:
        ds = self.decision_set
        return DecisionSet(
            linear_ineqs=[(np.asarray(row["a"], dtype=float), float(row["c"])) for row in ds.get("linear_ineqs", [])],
            linear_eqs=[(np.asarray(row["a"], dtype=float), float(row["c"])) for row in ds.get("linear_eqs", [])],
            lmi_blocks=[(np.asarray(b["F0"], dtype=float), [np.asarray(F, dtype=float) for F in b["F"]])
                        for b in ds.get("lmi", [])],
            poly_ineqs=[_poly(self.n, u) for u in ds.get("poly_ineqs", [])],
        )

    def random_model(self) -> Optional[RandomModel]:
        spec = self.random.get("model")
        if spec is None:
            return None
        return _model(spec, self.base_dir)

    def moments(self):
        """``(mu, Lambda)``: explicit values win over the model's moments."""
        mu = self.random.get("mu")
        Lam = self.random.get("Lambda")
        if mu is None or Lam is None:
            model = self.random_model()
            if model is None:
                raise ProblemError(["random: need a model or explicit mu and Lambda"])
            m0, L0 = moments_of(model)
            mu = m0 if mu is None else mu
            Lam = L0 if Lam is None else Lam
        return np.asarray(mu, dtype=float), np.asarray(Lam, dtype=float)

    def uncertainty(self, Gamma: float) -> UncertaintySet:
        mu, Lam = self.moments()
        return UncertaintySet(Gamma, mu, Lam)

    # -- serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        out = {
            "id": self.id,
            "decision": {"n": self.n, "names": list(self.names)},
            "objective": copy.deepcopy(self.objective),
            "chance": {"r": self.r, "terms": copy.deepcopy(self.terms)},
            "decision_set": copy.deepcopy(self.decision_set),
            "random": copy.deepcopy(self.random),
            "risk": {"eps": self.eps},
            "sizing": dict(self.sizing),
            "solver": dict(self.solver),
        }
        if self.reference:
            out["reference"] = copy.deepcopy(self.reference)
        return out


def _poly(n: int, terms) -> Poly:
    return Poly(n, [(tuple(t["e"]), float(t["c"])) for t in terms])


def poly_terms(p: Poly) -> List[dict]:
    return [{"c": float(c), "e": list(e)} for e, c in sorted(p.items())]


def _model(spec: dict, base_dir: str) -> RandomModel:
    kind = spec.get("kind")
    if kind == "product":
        comps = []
        for c in spec.get("components", []):
            c = dict(c)
            fam = c.pop("family", None)
            comps.append(Component(fam, c))
        return RandomModel("product", comps)
    if kind == "joint-gaussian":
        return RandomModel(kind, loc=spec.get("loc"), scale=spec.get("cov"))
    if kind == "joint-t":
        return RandomModel(kind, loc=spec.get("loc"), scale=spec.get("scale"), df=spec.get("df"))
    if kind == "empirical":
        if "samples" in spec:
            return RandomModel(kind, samples=spec["samples"])
        path = spec.get("csv")
        if path is None:
            raise ModelError("empirical model needs 'csv' or 'samples'")
        return RandomModel(kind, samples=load_samples_csv(os.path.join(base_dir, path)))
    raise ModelError(f"unknown model kind {kind!r}")


# ---------------------------------------------------------------------------
# validation


def _vec(errs, where, v, n=None):
    try:
        arr = np.asarray(v, dtype=float)
    except (TypeError, ValueError):
        errs.append(f"{where}: expected a list of numbers")
        return None
    if arr.ndim != 1:
        errs.append(f"{where}: expected a flat list")
        return None
    if n is not None and arr.shape[0] != n:
        errs.append(f"{where}: length {arr.shape[0]}, expected {n}")
        return None
    return arr


def _mat(errs, where, v, n=None):
    try:
        arr = np.asarray(v, dtype=float)
    except (TypeError, ValueError):
        errs.append(f"{where}: expected a matrix of numbers")
        return None
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        errs.append(f"{where}: expected a square matrix")
        return None
    if n is not None and arr.shape[0] != n:
        errs.append(f"{where}: size {arr.shape[0]}, expected {n}")
        return None
    return arr


def _poly_ok(errs, where, terms, n):
    if not isinstance(terms, list):
        errs.append(f"{where}: expected a list of {{c, e}} terms")
        return
    seen = set()
    for i, t in enumerate(terms):
        if not isinstance(t, dict) or "c" not in t or "e" not in t:
            errs.append(f"{where}[{i}]: expected {{\"c\": coef, \"e\": exponents}}")
            continue
        e = t["e"]
        if not isinstance(e, list) or len(e) != n or any(not isinstance(a, int) or a < 0 for a in e):
            errs.append(f"{where}[{i}].e: expected {n} nonnegative integers")
            continue
        if tuple(e) in seen:
            errs.append(f"{where}[{i}].e: duplicate exponent {tuple(e)}")
        seen.add(tuple(e))


def from_dict(data: dict, base_dir: str = ".") -> ProblemFile:
    errs: List[str] = []
    if not isinstance(data, dict):
        raise ProblemError(["<root>: expected a JSON object"])
    known = {"id", "decision", "objective", "chance", "decision_set", "random", "risk",
             "sizing", "solver", "reference"}
    for key in data:
        if key not in known:
            errs.append(f"{key}: unknown section")
    pid = str(data.get("id", "problem"))
    dec = data.get("decision")
    n = None
    names: List[str] = []
    if not isinstance(dec, dict) or not isinstance(dec.get("n"), int) or dec["n"] < 1:
        errs.append("decision.n: required positive integer")
    else:
        n = dec["n"]
        names = list(dec.get("names") or [f"x{i + 1}" for i in range(n)])
        if len(names) != n:
            errs.append(f"decision.names: {len(names)} names for n={n}")

    obj = data.get("objective")
    if not isinstance(obj, dict) or ("linear" in obj) == ("poly" in obj):
        errs.append("objective: give exactly one of 'linear' or 'poly'")
        obj = {}
    elif n is not None:
        if "linear" in obj:
            _vec(errs, "objective.linear", obj["linear"], n)
        else:
            _poly_ok(errs, "objective.poly", obj["poly"], n)
            if not obj.get("sos_convex", False):
                errs.append("objective.sos_convex: polynomial objectives must be declared SOS-convex")

    ch = data.get("chance")
    r = None
    terms: List[dict] = []
    if not isinstance(ch, dict) or not ch.get("terms"):
        errs.append("chance: chance constraint required")
    else:
        r = ch.get("r")
        if not isinstance(r, int) or r < 1:
            errs.append("chance.r: required positive integer")
            r = None
        terms = ch["terms"]
        seen = set()
        for i, t in enumerate(terms):
            where = f"chance.terms[{i}]"
            if not isinstance(t, dict) or "alpha" not in t:
                errs.append(f"{where}: expected an object with 'alpha'")
                continue
            al = t["alpha"]
            if r is not None and (not isinstance(al, list) or len(al) != r
                                  or any(not isinstance(a, int) or a < 0 for a in al)):
                errs.append(f"{where}.alpha: expected {r} nonnegative integers")
                continue
            if tuple(al) in seen:
                errs.append(f"{where}.alpha: duplicate exponent {tuple(al)}")
            seen.add(tuple(al))
            if t.get("a") is not None and n is not None:
                _vec(errs, f"{where}.a", t["a"], n)
            if not isinstance(t.get("b", 0.0), (int, float)):
                errs.append(f"{where}.b: expected a number")

    ds = data.get("decision_set", {}) or {}
    if not isinstance(ds, dict):
        errs.append("decision_set: expected an object")
        ds = {}
    for key in ds:
        if key not in ("linear_ineqs", "linear_eqs", "lmi", "poly_ineqs"):
            errs.append(f"decision_set.{key}: unknown field")
    if n is not None:
        for key in ("linear_ineqs", "linear_eqs"):
            for i, row in enumerate(ds.get(key, [])):
                if not isinstance(row, dict) or "a" not in row or "c" not in row:
                    errs.append(f"decision_set.{key}[{i}]: expected {{\"a\": [...], \"c\": number}}")
                    continue
                _vec(errs, f"decision_set.{key}[{i}].a", row["a"], n)
        for i, blk in enumerate(ds.get("lmi", [])):
            where = f"decision_set.lmi[{i}]"
            F0 = _mat(errs, f"{where}.F0", blk.get("F0"))
            Fs = blk.get("F")
            if not isinstance(Fs, list) or len(Fs) != n:
                errs.append(f"{where}.F: expected {n} matrices")
            elif F0 is not None:
                for j, F in enumerate(Fs):
                    _mat(errs, f"{where}.F[{j}]", F, F0.shape[0])
        polys = ds.get("poly_ineqs", [])
        for i, u in enumerate(polys):
            _poly_ok(errs, f"decision_set.poly_ineqs[{i}]", u, n)
        if polys and "linear" in obj:
            errs.append("decision_set.poly_ineqs: polynomial constraints need a polynomial (SOS-convex) objective")

    rnd = data.get("random", {}) or {}
    if not isinstance(rnd, dict):
        errs.append("random: expected an object")
        rnd = {}
    if "model" not in rnd and ("mu" not in rnd or "Lambda" not in rnd):
        errs.append("random: need a model or explicit mu and Lambda")
    if r is not None:
        if "mu" in rnd:
            _vec(errs, "random.mu", rnd["mu"], r)
        if "Lambda" in rnd:
            L = _mat(errs, "random.Lambda", rnd["Lambda"], r)
            if L is not None and (not np.allclose(L, L.T) or np.linalg.eigvalsh(0.5 * (L + L.T))[0] <= 0):
                errs.append("random.Lambda: must be symmetric positive definite")
    if "model" in rnd:
        spec = rnd["model"]
        if not isinstance(spec, dict):
            errs.append("random.model: expected an object")
        elif spec.get("kind") == "product":
            for i, c in enumerate(spec.get("components", [])):
                if c.get("family") not in FAMILIES:
                    errs.append(f"random.model.components[{i}].family: unknown distribution family "
                                f"{c.get('family')!r}")
            if r is not None and len(spec.get("components", [])) != r:
                errs.append(f"random.model.components: {len(spec.get('components', []))} components for r={r}")
        if not errs:
            try:
                model = _model(spec, base_dir)
                if r is not None and model.r != r:
                    errs.append(f"random.model: dimension {model.r}, expected r={r}")
            except (ModelError, OSError) as exc:
                errs.append(f"random.model: {exc}")

    risk = data.get("risk", {}) or {}
    eps = risk.get("eps")
    if not isinstance(eps, (int, float)) or not 0 < eps < 1:
        errs.append("risk.eps: required, must lie in (0, 1)")
        eps = 0.5
    sizing = dict(SIZING_DEFAULTS)
    sizing.update(data.get("sizing", {}) or {})
    for key in sizing:
        if key not in SIZING_DEFAULTS:
            errs.append(f"sizing.{key}: unknown field")
    if not 0 <= sizing["beta"] < 1:
        errs.append("sizing.beta: must lie in [0, 1)")
    for key in ("N", "Nhat"):
        if not isinstance(sizing[key], int) or sizing[key] < 1:
            errs.append(f"sizing.{key}: must be a positive integer")
    solver = dict(SOLVER_DEFAULTS)
    solver.update(data.get("solver", {}) or {})
    for key in solver:
        if key not in SOLVER_DEFAULTS:
            errs.append(f"solver.{key}: unknown field")
    if errs:
        raise ProblemError(errs)
    return ProblemFile(pid, n, names, obj, r, terms, ds, rnd, float(eps), sizing, solver,
                       data.get("reference", {}) or {}, base_dir)


def parse_problem(path) -> ProblemFile:
    path = os.fspath(path)
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ProblemError([f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}"]) from None
    try:
        return from_dict(data, os.path.dirname(os.path.abspath(path)))
    except ProblemError as exc:
        raise ProblemError([f"{path}: {d}" for d in exc.diagnostics]) from None


def emit_problem(pf: ProblemFile, path=None) -> str:
    data = pf.to_dict()
    model = data.get("random", {}).get("model", {})
    if path is not None and isinstance(model.get("csv"), str) and not os.path.isabs(model["csv"]):
        # keep the sample file reachable from wherever the problem is written
        src = os.path.join(pf.base_dir, model["csv"])
        model["csv"] = os.path.relpath(src, os.path.dirname(os.path.abspath(path)))
    text = json.dumps(data, indent=2)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    return text
