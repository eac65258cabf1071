"""Command-line driver: ``ccocli solve-at-gamma | size | certify | reproduce``.

Every command prints a plain-text table (4 decimals) and, with ``--out``,
writes ``<id>.txt`` and ``<id>.ndjson`` (one JSON record per solve, full
precision).  Records carry no wall time unless ``--timing`` is given, so
repeated runs with the same seed give byte-identical records.

Exit codes: 0 when every solve certified (or every sizing run converged),
1 otherwise, 2 on bad input or solver failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from typing import List, Optional

import numpy as np

from .conicore import SolverOptions
from .problemfile import ProblemError, ProblemFile, parse_problem
from .robustsolve import (SolveOptions, SolveReport, SolverFailure, certify_solution,
                          solve_linear_cco, solve_sosconvex_cco)
from .uncertainkit import ModelError, QuantileUnsolvable, ViolationEstimator, sample, size_uncertainty_set

log = logging.getLogger("ccorobust.cli")


def fixture_ids() -> List[str]:
    root = resources.files("ccorobust") / "fixtures"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load(spec: str) -> ProblemFile:
    """A problem file path, or the id of a bundled fixture."""
    if os.path.exists(spec):
        return parse_problem(spec)
    root = resources.files("ccorobust") / "fixtures"
    path = root / f"{spec}.json"
    if not path.is_file():
        raise ProblemError([f"{spec}: no such file or fixture (fixtures: {', '.join(fixture_ids())})"])
    with resources.as_file(path) as p:
        return parse_problem(p)


def solve_options(pf: ProblemFile, args) -> SolveOptions:
    gap = args.gap_tol if getattr(args, "gap_tol", None) is not None else pf.solver.get("gap_tol", 1e-6)
    kmax = args.kmax if getattr(args, "kmax", None) is not None else pf.solver.get("k_max")
    return SolveOptions(gap_tol=gap, cert_tol=pf.solver.get("cert_tol", 1e-6), k_max=kmax,
                        solver=SolverOptions())


def solve_at(pf: ProblemFile, gamma: float, opts: SolveOptions) -> SolveReport:
    pc, X, U = pf.perturbed_constraint(), pf.decision(), pf.uncertainty(gamma)
    if pf.sos_convex:
        return solve_sosconvex_cco(pf.objective_poly(), pc, X, U, opts)
    return solve_linear_cco(pf.objective_vector(), pc, X, U, opts)


def _f(v) -> Optional[float]:
    if v is None:
        return None
    v = float(v)
    return None if math.isnan(v) else v


def _record(pf: ProblemFile, command: str, gamma: float, eps: float, rep: SolveReport, **extra) -> dict:
    rec = {
        "problem": pf.id, "command": command, "eps": eps, "gamma": gamma,
        "status": rep.status, "fstar": _f(rep.fstar),
        "xstar": None if rep.xstar is None else [float(v) for v in rep.xstar],
        "gap": _f(rep.gap), "flat_t": rep.flat_t, "k": rep.k_used, "k0": rep.k0,
        "pvio": None, "loops": None,
    }
    rec.update(extra)
    return rec


def _fmt(v, width=10):
    if v is None:
        return "-".rjust(width)
    if isinstance(v, str):
        return v.rjust(width)
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(v).rjust(width)
    v = float(v)
    if math.isnan(v):
        return "nan".rjust(width)
    if v != 0 and (abs(v) < 1e-3 or abs(v) >= 1e5):
        return f"{v:.4e}".rjust(width)
    return f"{v:.4f}".rjust(width)


def table(rows: List[dict], cols: List[str]) -> str:
    head = " ".join(c.rjust(max(10, len(c))) for c in cols)
    lines = [head, "-" * len(head)]
    for r in rows:
        cells = []
        for c in cols:
            v = r.get(c)
            w = max(10, len(c))
            if isinstance(v, list):
                cells.append(("(" + ", ".join(f"{float(t):.4f}" for t in v) + ")").rjust(w))
            else:
                cells.append(_fmt(v, w))
        lines.append(" ".join(cells))
    return "\n".join(lines)


def _emit(args, pid: str, records: List[dict], text: str) -> None:
    print(text)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, f"{pid}.txt"), "w") as fh:
            fh.write(text + "\n")
        with open(os.path.join(args.out, f"{pid}.ndjson"), "w") as fh:
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _pvio(pf: ProblemFile, x, nhat: int, seed: int) -> Optional[float]:
    model = pf.random_model()
    if model is None or x is None:
        return None
    return ViolationEstimator(pf.perturbed_constraint(), sample(model, nhat, seed))(x)


# ---------------------------------------------------------------------------
# commands


def cmd_solve(args) -> int:
    pf = load(args.problem)
    t = time.perf_counter()
    rep = solve_at(pf, args.gamma, solve_options(pf, args))
    wall = time.perf_counter() - t
    pv = _pvio(pf, rep.xstar, args.mc, args.seed if args.seed is not None else pf.sizing["seed"]) if args.mc else None
    rec = _record(pf, "solve-at-gamma", args.gamma, pf.eps, rep, pvio=pv)
    if args.timing:
        rec["wall_time"] = wall
    row = dict(rec, wall=wall)
    text = table([row], ["gamma", "status", "fstar", "gap", "flat_t", "k", "pvio", "wall", "xstar"])
    _emit(args, pf.id, [rec], text)
    return 0 if rep.certified else 1


def cmd_certify(args) -> int:
    pf = load(args.problem)
    rep = solve_at(pf, args.gamma, solve_options(pf, args))
    if rep.xstar is None:
        print(f"{pf.id}: no solution to certify ({rep.status})")
        return 1
    seed = args.seed if args.seed is not None else 0
    chk = certify_solution(pf.perturbed_constraint(), pf.uncertainty(args.gamma), rep,
                           npoints=args.mc or 10000, seed=seed, gap_tol=solve_options(pf, args).gap_tol)
    rec = _record(pf, "certify", args.gamma, pf.eps, rep, checks=chk)
    lines = [f"{pf.id} at gamma={args.gamma:.4f}: f*={rep.fstar:.4f} status={rep.status}"]
    for name, key, val in (("duality gap", "gap_ok", chk["gap"]), ("flat truncation at k0", "flat_ok", chk["flat_t"]),
                           ("min over U of h(x*, .)", "min_on_U_ok", chk["min_on_U"]),
                           ("sampled min of h(x*, .)", "sampled_ok", chk["sampled_min"])):
        lines.append(f"  {'PASS' if chk[key] else 'FAIL'}  {name:<26}{_fmt(val)}")
    _emit(args, pf.id, [rec], "\n".join(lines))
    return 0 if chk["ok"] and rep.certified else 1


def _sizing_params(pf: ProblemFile, args, eps=None) -> dict:
    s = dict(pf.sizing)
    for key, attr in (("beta", "beta"), ("rho", "rho"), ("N", "samples"), ("Nhat", "mc"), ("seed", "seed")):
        v = getattr(args, attr, None)
        if v is not None:
            s[key] = v
    s["eps"] = eps if eps is not None else (args.eps if getattr(args, "eps", None) is not None else pf.eps)
    return s


def run_sizing(pf: ProblemFile, s: dict, opts: SolveOptions, command: str = "size"):
    model = pf.random_model()
    if model is None:
        raise ModelError("sizing needs a random model in the problem file")
    mu, Lam = pf.moments()

    def solver(G):
        rep = solve_at(pf, G, opts)
        if rep.xstar is None:
            raise SolverFailure(f"robust approximation at gamma={G} returned {rep.status}", rep.trace)
        if not rep.certified:
            log.warning("gamma=%.6g: %s", G, rep.status)
        return rep

    loops: List[dict] = []
    srep = size_uncertainty_set(pf.perturbed_constraint(), model, s["eps"], s["beta"], s["rho"], s["N"],
                                s["Nhat"], s["seed"], solver, mu=mu, Lambda=Lam, progress=loops.append)
    records = [{"problem": pf.id, "command": command, "record": "loop", "eps": s["eps"], **e} for e in loops]
    final = {
        "problem": pf.id, "command": command, "record": "sizing", "eps": s["eps"], "beta": s["beta"],
        "beta_used": srep.beta_used, "rho": s["rho"], "N": s["N"], "Nhat": s["Nhat"], "seed": s["seed"],
        "gamma1": srep.initial_gamma, "lstar": srep.lstar, "f_initial": srep.f_initial,
        "p_initial": srep.p_initial, "gamma": srep.gamma_star, "fstar": srep.fstar,
        "xstar": None if srep.xstar is None else [float(v) for v in srep.xstar],
        "pvio": srep.pvio, "loops": srep.loops, "status": srep.status_label,
    }
    records.append(final)
    return srep, records


def cmd_size(args) -> int:
    pf = load(args.problem)
    s = _sizing_params(pf, args)
    t = time.perf_counter()
    srep, records = run_sizing(pf, s, solve_options(pf, args))
    wall = time.perf_counter() - t
    if args.timing:
        records[-1]["wall_time"] = wall
    final = dict(records[-1], wall=wall)
    text = table([final], ["eps", "gamma1", "p_initial", "gamma", "pvio", "fstar", "loops", "wall", "xstar"])
    text += f"\nstatus: {srep.status_label}"
    _emit(args, pf.id, records, text)
    return 0 if srep.status == "converged" else 1


def _reference_rows(pf: ProblemFile) -> List[dict]:
    ref = pf.reference
    if "rows" in ref:
        return [dict(r) for r in ref["rows"]]
    if "gamma_star" in ref:
        return [dict(ref, eps=pf.eps)]
    return [{"eps": pf.eps}]


def reproduce_one(fid: str, args) -> tuple:
    """Returns ``(exit_code, text, records)`` for one fixture."""
    pf = load(fid)
    rows = _reference_rows(pf)
    if args.eps is not None:
        rows = [r for r in rows if abs(r["eps"] - args.eps) < 1e-12] or [{"eps": args.eps}]
    opts = solve_options(pf, args)
    records, shown = [], []
    ok = True
    sizing = args.size or all("gamma_star" not in r for r in rows) and args.gamma is None
    for row in rows:
        t = time.perf_counter()
        if sizing:
            s = _sizing_params(pf, args, eps=row["eps"])
            srep, recs = run_sizing(pf, s, opts, "reproduce")
            records.extend(recs)
            res = dict(recs[-1])
            ok &= srep.status == "converged"
        else:
            gamma = args.gamma if args.gamma is not None else row.get("gamma_star")
            if gamma is None:
                raise ProblemError([f"{pf.id}: no reference Gamma for eps={row['eps']}; pass --gamma or --size"])
            rep = solve_at(pf, gamma, opts)
            pv = _pvio(pf, rep.xstar, args.mc, args.seed if args.seed is not None else 0) if args.mc else None
            res = _record(pf, "reproduce", gamma, row["eps"], rep, pvio=pv)
            records.append(res)
            ok &= rep.certified
        wall = time.perf_counter() - t
        if args.timing:
            records[-1]["wall_time"] = wall
        shown.append(dict(res, wall=wall, ref_f=row.get("fstar"),
                          delta_f=None if row.get("fstar") is None or res["fstar"] is None
                          else res["fstar"] - row["fstar"]))
    cols = ["eps", "gamma", "status", "fstar", "ref_f", "delta_f", "pvio", "loops", "wall", "xstar"]
    text = f"[{pf.id}]\n" + table(shown, cols)
    return (0 if ok else 1), text, records


def cmd_reproduce(args) -> int:
    ids = fixture_ids() if args.fixture == "all" else [args.fixture]
    if args.fixture == "all" and args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as ex:
            results = list(ex.map(reproduce_one, ids, [args] * len(ids)))
    else:
        results = [reproduce_one(fid, args) for fid in ids]
    code = 0
    for fid, (rc, text, records) in zip(ids, results):
        _emit(args, fid, records, text)
        code = max(code, rc)
    return code


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ccocli", description="Robust approximation of polynomial chance constraints.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, gamma_required=False):
        sp.add_argument("--gamma", type=float, required=gamma_required, help="uncertainty set size")
        sp.add_argument("--kmax", type=int, help="largest relaxation order")
        sp.add_argument("--gap-tol", type=float, help="relative duality gap tolerance")
        sp.add_argument("--mc", type=int, help="Monte Carlo samples (violation estimate or certification points)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="directory for the .txt table and .ndjson records")
        sp.add_argument("--timing", action="store_true", help="include wall time in the records")

    def sizing(sp):
        sp.add_argument("--eps", type=float, help="risk level")
        sp.add_argument("--beta", type=float, help="confidence parameter")
        sp.add_argument("--rho", type=float, help="bisection tolerance on p_vio")
        sp.add_argument("--samples", type=int, help="samples N for the initial set size")

    sp = sub.add_parser("solve-at-gamma", help="solve the robust approximation at a fixed set size")
    sp.add_argument("problem", help="problem file or fixture id")
    common(sp, gamma_required=True)
    sp.set_defaults(fn=cmd_solve)

    sp = sub.add_parser("size", help="size the uncertainty set by bisection on Gamma")
    sp.add_argument("problem")
    common(sp)
    sizing(sp)
    sp.set_defaults(fn=cmd_size)

    sp = sub.add_parser("certify", help="solve at a fixed size and run the certification checks")
    sp.add_argument("problem")
    common(sp, gamma_required=True)
    sp.set_defaults(fn=cmd_certify)

    sp = sub.add_parser("reproduce", help="rerun a bundled fixture ('all' for every fixture)")
    sp.add_argument("fixture")
    common(sp)
    sizing(sp)
    sp.add_argument("--size", action="store_true", help="run the full sizing pipeline instead of fixed-Gamma solves")
    sp.add_argument("--jobs", type=int, default=1, help="parallel fixtures for 'reproduce all'")
    sp.set_defaults(fn=cmd_reproduce)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except ProblemError as exc:
        for d in exc.diagnostics:
            print(f"error: {d}", file=sys.stderr)
        return 2
    except (SolverFailure, ModelError, QuantileUnsolvable, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
