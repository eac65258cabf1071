"""Block-structured conic programs.

A :class:`ConicProgram` is the standard-form problem

    minimize    <C, X>
    subject to  A(X) = b,   X = (X_1, ..., X_p),  X_i in K_i,

where each block ``K_i`` is ``free`` (R^n), ``nonneg`` (R^n_+) or
``psd`` (symmetric PSD matrices of a given side).  Its conic dual is

    maximize    b^T y
    subject to  C - A^T(y) = S,   S_i in K_i^*   (S_i = 0 on free blocks).

Coefficients on a PSD block are addressed by position ``(i, j)``; a value
``v`` at ``(i, j)`` contributes ``v * X[i, j]`` to the row, for either
triangle.  Rows are created in named groups so that multipliers can later be
relabeled (see :func:`ccorobust.conicore.dual_extract`).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Hashable, List, Optional, Sequence

import numpy as np
import scipy.sparse as sp

KINDS = ("free", "nonneg", "psd")


class ProgramError(ValueError):
    pass


@dataclass
class Block:
    name: str
    kind: str
    size: int
    index: int

    @property
    def nvars(self) -> int:
        return self.size * self.size if self.kind == "psd" else self.size


@dataclass
class RowGroup:
    name: str
    rows: np.ndarray
    keys: list


class ConicProgram:
    def __init__(self, name: str = ""):
        self.name = name
        self.blocks: List[Block] = []
        self._by_name: Dict[str, Block] = {}
        self._rhs: List[np.ndarray] = []
        self._m = 0
        self.groups: Dict[str, RowGroup] = {}
        # per-block coefficient triplets: (row, flat col, value)
        self._coef: Dict[str, List[tuple]] = {}
        self._obj: Dict[str, List[tuple]] = {}
        self.obj_offset = 0.0
        self.meta: dict = {}

    # -- structure --------------------------------------------------------
    def add_block(self, name: str, kind: str, size: int) -> Block:
        if kind not in KINDS:
            raise ProgramError(f"unknown block kind {kind!r}")
        if name in self._by_name:
            raise ProgramError(f"duplicate block name {name!r}")
        if size < 1:
            raise ProgramError(f"block {name!r} must have positive size")
        blk = Block(name, kind, int(size), len(self.blocks))
        self.blocks.append(blk)
        self._by_name[name] = blk
        self._coef[name] = []
        self._obj[name] = []
        return blk

    def block(self, name: str) -> Block:
        try:
            return self._by_name[name]
        except KeyError:
            raise ProgramError(f"no block named {name!r}") from None

    def has_block(self, name: str) -> bool:
        return name in self._by_name

    @property
    def m(self) -> int:
        return self._m

    @property
    def rhs(self) -> np.ndarray:
        return np.concatenate(self._rhs) if self._rhs else np.zeros(0)

    def add_rows(self, group: str, rhs, keys: Optional[Sequence[Hashable]] = None) -> np.ndarray:
        rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
        rows = np.arange(self._m, self._m + rhs.shape[0])
        keys = list(range(rhs.shape[0])) if keys is None else list(keys)
        if len(keys) != rhs.shape[0]:
            raise ProgramError("keys and rhs lengths differ")
        if group in self.groups:
            g = self.groups[group]
            g.rows = np.concatenate([g.rows, rows])
            g.keys.extend(keys)
        else:
            self.groups[group] = RowGroup(group, rows, keys)
        self._rhs.append(rhs)
        self._m += rhs.shape[0]
        return rows

    # -- coefficients -----------------------------------------------------
    def _flat(self, blk: Block, i, j):
        i = np.atleast_1d(np.asarray(i, dtype=np.int64))
        if blk.kind == "psd":
            if j is None:
                raise ProgramError(f"PSD block {blk.name!r} needs (i, j) positions")
            j = np.atleast_1d(np.asarray(j, dtype=np.int64))
            n = blk.size
            if (i.size and (i.max() >= n or i.min() < 0)) or (j.size and (j.max() >= n or j.min() < 0)):
                raise ProgramError(f"position out of range for block {blk.name!r}")
            return i, j
        if j is not None:
            raise ProgramError(f"vector block {blk.name!r} takes a single index")
        if i.size and (i.max() >= blk.size or i.min() < 0):
            raise ProgramError(f"index out of range for block {blk.name!r}")
        return i, None

    @staticmethod
    def _sym(blk: Block, i, j, v):
        """Split off-diagonal PSD entries evenly over both triangles."""
        n = blk.size
        diag = i == j
        off = ~diag
        cols = np.concatenate([i[diag] * n + j[diag], i[off] * n + j[off], j[off] * n + i[off]])
        vals = np.concatenate([v[diag], 0.5 * v[off], 0.5 * v[off]])
        return cols, vals, np.concatenate([np.flatnonzero(diag), np.flatnonzero(off), np.flatnonzero(off)])

    def add_coeffs(self, block: str, rows, i, j=None, vals=1.0) -> None:
        blk = self.block(block)
        i, j = self._flat(blk, i, j)
        rows = np.broadcast_to(np.asarray(rows, dtype=np.int64), i.shape)
        vals = np.broadcast_to(np.asarray(vals, dtype=float), i.shape)
        if rows.size and (rows.max() >= self._m or rows.min() < 0):
            raise ProgramError("row index out of range")
        if blk.kind == "psd":
            cols, v, src = self._sym(blk, i, j, vals)
            self._coef[block].append((rows[src], cols, v))
        else:
            self._coef[block].append((rows.copy(), i, vals.copy()))

    def add_objective(self, block: str, i, j=None, vals=1.0) -> None:
        blk = self.block(block)
        i, j = self._flat(blk, i, j)
        vals = np.broadcast_to(np.asarray(vals, dtype=float), i.shape)
        if blk.kind == "psd":
            cols, v, _ = self._sym(blk, i, j, vals)
            self._obj[block].append((cols, v))
        else:
            self._obj[block].append((i, vals.copy()))

    # -- assembled views --------------------------------------------------
    def offsets(self) -> Dict[str, slice]:
        out, pos = {}, 0
        for blk in self.blocks:
            out[blk.name] = slice(pos, pos + blk.nvars)
            pos += blk.nvars
        return out

    @property
    def nvars(self) -> int:
        return sum(b.nvars for b in self.blocks)

    def matrix(self) -> sp.csr_matrix:
        """The constraint map as an ``m x nvars`` matrix over flat block vectors."""
        offs = self.offsets()
        rr, cc, vv = [np.zeros(0, np.int64)], [np.zeros(0, np.int64)], [np.zeros(0)]
        for blk in self.blocks:
            for rows, cols, vals in self._coef[blk.name]:
                rr.append(rows)
                cc.append(cols + offs[blk.name].start)
                vv.append(vals)
        A = sp.coo_matrix((np.concatenate(vv), (np.concatenate(rr), np.concatenate(cc))),
                          shape=(self._m, self.nvars))
        return A.tocsr()

    def objective(self) -> np.ndarray:
        offs = self.offsets()
        c = np.zeros(self.nvars)
        for blk in self.blocks:
            for cols, vals in self._obj[blk.name]:
                np.add.at(c, cols + offs[blk.name].start, vals)
        return c

    def unflatten(self, vec: np.ndarray) -> Dict[str, np.ndarray]:
        out = {}
        for blk, sl in zip(self.blocks, self.offsets().values()):
            v = np.asarray(vec[sl])
            out[blk.name] = v.reshape(blk.size, blk.size) if blk.kind == "psd" else v.copy()
        return out

    def flatten(self, values: Dict[str, np.ndarray]) -> np.ndarray:
        parts = []
        for blk in self.blocks:
            v = np.asarray(values[blk.name], dtype=float)
            parts.append(v.reshape(-1))
        return np.concatenate(parts)

    def dump_triplets(self, path) -> None:
        """Write ``block row col value`` lines (objective uses row ``-1``).

        PSD entries are written for the upper triangle with the full
        symmetric weight, so they can be fed to external SDP solvers that
        take the same convention.
        """
        A = self.matrix().tocoo()
        c = self.objective()
        offs = self.offsets()
        with open(path, "w") as fh:
            fh.write(f"# m={self.m} rhs={' '.join(repr(float(v)) for v in self.rhs)}\n")
            for blk in self.blocks:
                fh.write(f"# block {blk.name} {blk.kind} {blk.size}\n")
            for blk in self.blocks:
                sl = offs[blk.name]
                sel = (A.col >= sl.start) & (A.col < sl.stop)
                entries = [(-1, col - sl.start, c[col]) for col in range(sl.start, sl.stop) if c[col] != 0]
                entries += list(zip(A.row[sel], A.col[sel] - sl.start, A.data[sel]))
                for row, col, v in entries:
                    if blk.kind == "psd":
                        i, j = divmod(int(col), blk.size)
                        if i > j:
                            continue
                        w = v if i == j else 2 * v
                        fh.write(f"{blk.name} {int(row)} {i},{j} {float(w)!r}\n")
                    else:
                        fh.write(f"{blk.name} {int(row)} {int(col)} {float(v)!r}\n")
