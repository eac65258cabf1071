"""Conic programs, a bundled interior-point solver and a backend hook.

``CCO_BACKEND`` picks the solver used by :func:`solve` when no backend is
passed explicitly: ``ipm`` (default, bundled) or ``cvxpy`` (optional,
needs cvxpy with an SDP-capable solver installed).
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable, Dict, Mapping, Optional

import numpy as np
import scipy.sparse as sp

from .ipm import SolverOptions, ipm_solve
from .program import Block, ConicProgram, ProgramError, RowGroup

__all__ = [
    "Block", "ConicProgram", "ProgramError", "RowGroup", "SolverOptions",
    "PrimalDualSolution", "solve", "dual_extract", "register_backend", "MissingLabel",
]

STATUSES = ("optimal", "primal-infeasible", "dual-infeasible", "numerical-failure")


class MissingLabel(KeyError):
    pass


@dataclass
class PrimalDualSolution:
    status: str
    primal: Dict[str, np.ndarray]
    y: np.ndarray                       # one multiplier per equality row
    slack: Dict[str, np.ndarray]        # dual cone variable per block
    pobj: float
    dobj: float
    gap: float
    pres: float
    dres: float
    iterations: int = 0
    backend: str = "ipm"
    info: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    @property
    def residuals(self):
        return self.pres, self.dres


def _ipm_backend(prog: ConicProgram, opts: SolverOptions) -> PrimalDualSolution:
    A = prog.matrix()
    b = prog.rhs
    c = prog.objective()
    m = prog.m
    # drop empty rows; a nonzero right-hand side on one is infeasible outright
    nnz = np.diff(A.indptr)
    empty = nnz == 0
    if np.any(empty & (b != 0)):
        y = np.zeros(m)
        y[empty & (b != 0)] = np.sign(b[empty & (b != 0)])
        return PrimalDualSolution("primal-infeasible", prog.unflatten(np.zeros(prog.nvars)), y,
                                  prog.unflatten(np.zeros(prog.nvars)), np.nan, np.nan, np.nan,
                                  np.inf, np.inf)
    keep = np.flatnonzero(~empty)
    Ak = A[keep]
    bk = b[keep]
    # row equilibration; multipliers are scaled back below
    rn = np.sqrt(np.asarray(Ak.multiply(Ak).sum(axis=1)).ravel())
    d = 1.0 / np.where(rn > 0, rn, 1.0)
    As = sp.diags(d) @ Ak
    bs = bk * d
    offs = prog.offsets()
    blocks = [(blk.kind, offs[blk.name], blk.size) for blk in prog.blocks]
    raw = ipm_solve(As.tocsr(), bs, c, blocks, opts)
    y = np.zeros(m)
    y[keep] = raw.y * d
    pres = np.linalg.norm(A @ raw.x - b) / (1 + np.linalg.norm(b))
    dres = np.linalg.norm(c - A.T @ y - raw.s) / (1 + np.linalg.norm(c))
    pobj = float(c @ raw.x) + prog.obj_offset
    dobj = float(b @ y) + prog.obj_offset
    return PrimalDualSolution(raw.status, prog.unflatten(raw.x), y, prog.unflatten(raw.s),
                              pobj, dobj, abs(pobj - dobj), pres, dres, raw.iterations, "ipm",
                              {"tau": raw.tau, "kappa": raw.kappa, "inaccurate": raw.inaccurate})


def _cvxpy_backend(prog: ConicProgram, opts: SolverOptions) -> PrimalDualSolution:
    import cvxpy as cp

    A = prog.matrix()
    b = prog.rhs
    c = prog.objective()
    offs = prog.offsets()
    parts, cons = [], []
    for blk in prog.blocks:
        if blk.kind == "psd":
            V = cp.Variable((blk.size, blk.size), symmetric=True)
            cons.append(V >> 0)
            parts.append(cp.vec(V, order="C"))
        elif blk.kind == "nonneg":
            v = cp.Variable(blk.size)
            cons.append(v >= 0)
            parts.append(v)
        else:
            parts.append(cp.Variable(blk.size))
    xv = cp.hstack(parts)
    eq = A @ xv == b
    pr = cp.Problem(cp.Minimize(c @ xv), [eq] + cons)
    pr.solve(solver=os.environ.get("CCO_CVXPY_SOLVER", "CLARABEL"))
    stat = {"optimal": "optimal", "infeasible": "primal-infeasible",
            "unbounded": "dual-infeasible"}.get(pr.status, "numerical-failure")
    x = xv.value if xv.value is not None else np.zeros(prog.nvars)
    y = -np.asarray(eq.dual_value) if eq.dual_value is not None else np.zeros(prog.m)
    s = c - A.T @ y
    pobj = float(c @ x) + prog.obj_offset
    dobj = float(b @ y) + prog.obj_offset
    pres = np.linalg.norm(A @ x - b) / (1 + np.linalg.norm(b))
    return PrimalDualSolution(stat, prog.unflatten(x), y, prog.unflatten(s), pobj, dobj,
                              abs(pobj - dobj), pres, 0.0, 0, "cvxpy")


_BACKENDS: Dict[str, Callable] = {"ipm": _ipm_backend, "cvxpy": _cvxpy_backend}


def register_backend(name: str, fn: Callable[[ConicProgram, SolverOptions], PrimalDualSolution]) -> None:
    """Make ``fn`` selectable via ``solve(..., backend=name)`` or ``CCO_BACKEND``."""
    _BACKENDS[name] = fn


def solve(prog: ConicProgram, opts: Optional[SolverOptions] = None,
          backend: Optional[str] = None) -> PrimalDualSolution:
    opts = opts or SolverOptions()
    name = backend or os.environ.get("CCO_BACKEND", "ipm")
    try:
        fn = _BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown conic backend {name!r}; known: {sorted(_BACKENDS)}") from None
    if prog.m == 0:
        raise ProgramError("program has no equality rows")
    return fn(prog, opts)


def dual_extract(prog: ConicProgram, sol: PrimalDualSolution,
                 blockmap: Optional[Mapping[str, object]] = None) -> Dict[str, np.ndarray]:
    """Relabel row multipliers by row group.

    ``blockmap`` maps an output label to a row-group name, or to a
    ``(group, sign)`` pair when the caller's convention flips the sign.
    With no map every group is returned under its own name.
    """
    if blockmap is None:
        return {name: sol.y[g.rows].copy() for name, g in prog.groups.items()}
    out = {}
    for label, spec in blockmap.items():
        group, sign = (spec, 1.0) if isinstance(spec, str) else spec
        if group not in prog.groups:
            raise MissingLabel(f"no row group {group!r} in program")
        out[label] = sign * sol.y[prog.groups[group].rows]
    return out
