"""Standard-form cone programs and their solutions.

The primal problem is

    minimize    c'x
    subject to  A x = b,  x in K

where K is a product of free, nonnegative, second-order and PSD blocks.  The
dual is ``maximize b'y  s.t.  A'y + s = c, s in K*`` with ``s = 0`` on free
blocks.  PSD blocks are stored as ``svec`` vectors (upper triangle, row-major,
off-diagonals scaled by sqrt(2)) so the trace inner product is the Euclidean
one.
"""

from __future__ import annotations

import dataclasses
import enum
import json
from typing import Any, Sequence

import numpy as np
import scipy.sparse as sp

SQRT2 = np.sqrt(2.0)

BLOCK_KINDS = ("free", "nonneg", "soc", "psd")


def svec_len(q: int) -> int:
    return q * (q + 1) // 2


def psd_dim(t: int) -> int:
    q = int(round((np.sqrt(8 * t + 1) - 1) / 2))
    if svec_len(q) != t:
        raise ValueError(f"{t} is not a triangular number")
    return q


def svec(X: np.ndarray) -> np.ndarray:
    """Vectorize the symmetric matrix (or stack of matrices) ``X``."""
    X = np.asarray(X, dtype=float)
    q = X.shape[-1]
    iu, ju = np.triu_indices(q)
    v = X[..., iu, ju].copy()
    v[..., iu != ju] *= SQRT2
    return v


def smat(v: np.ndarray) -> np.ndarray:
    """Inverse of :func:`svec`; accepts a trailing svec axis."""
    v = np.asarray(v, dtype=float)
    q = psd_dim(v.shape[-1])
    iu, ju = np.triu_indices(q)
    off = iu != ju
    X = np.zeros(v.shape[:-1] + (q, q))
    vals = v.copy()
    vals[..., off] /= SQRT2
    X[..., iu, ju] = vals
    X[..., ju, iu] = vals
    return X


@dataclasses.dataclass(frozen=True)
class Block:
    """One cone block: ``kind`` in BLOCK_KINDS and its order ``dim``.

    For ``psd`` blocks ``dim`` is the matrix order q; the block then occupies
    q(q+1)/2 entries of x.
    """

    kind: str
    dim: int

    def __post_init__(self):
        if self.kind not in BLOCK_KINDS:
            raise ValueError(f"unknown block kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("block dimension must be positive")
        if self.kind == "soc" and self.dim < 2:
            raise ValueError("second-order blocks need dim >= 2")

    @property
    def size(self) -> int:
        return svec_len(self.dim) if self.kind == "psd" else self.dim


@dataclasses.dataclass
class ConicProblem:
    c: np.ndarray
    A: Any  # dense ndarray or scipy.sparse matrix, shape (m, n)
    b: np.ndarray
    blocks: list[Block]
    names: dict[str, slice] = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        self.b = np.asarray(self.b, dtype=float).ravel()
        if not sp.issparse(self.A):
            self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
            if self.A.size == 0:
                self.A = np.zeros((len(self.b), len(self.c)))
        m, n = self.A.shape
        if n != len(self.c):
            raise ValueError(f"A has {n} columns but c has length {len(self.c)}")
        if m != len(self.b):
            raise ValueError(f"A has {m} rows but b has length {len(self.b)}")
        total = sum(blk.size for blk in self.blocks)
        if total != n:
            raise ValueError(f"blocks cover {total} variables, problem has {n}")

    @property
    def n(self) -> int:
        return len(self.c)

    @property
    def m(self) -> int:
        return len(self.b)

    def offsets(self) -> list[int]:
        out, pos = [], 0
        for blk in self.blocks:
            out.append(pos)
            pos += blk.size
        return out

    def to_json(self) -> dict:
        """Dump in a plain standard form for cross-checking with other solvers."""
        A = sp.coo_matrix(self.A)
        return {
            "format": "wasscopos-conic-1",
            "sense": "minimize",
            "svec": "upper-triangle row-major, off-diagonal scaled by sqrt(2)",
            "c": self.c.tolist(),
            "b": self.b.tolist(),
            "A": {
                "shape": list(A.shape),
                "row": A.row.tolist(),
                "col": A.col.tolist(),
                "val": A.data.tolist(),
            },
            "blocks": [[blk.kind, blk.dim] for blk in self.blocks],
        }

    @classmethod
    def from_json(cls, data: dict) -> "ConicProblem":
        a = data["A"]
        A = sp.coo_matrix((a["val"], (a["row"], a["col"])), shape=tuple(a["shape"])).tocsr()
        blocks = [Block(kind, dim) for kind, dim in data["blocks"]]
        return cls(np.array(data["c"]), A, np.array(data["b"]), blocks)

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    MAX_ITER = "max_iter"
    NUMERICAL = "numerical"


@dataclasses.dataclass
class ConicSolution:
    status: Status
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    primal_objective: float
    dual_objective: float
    primal_residual: float
    dual_residual: float
    gap: float
    iterations: int
    history: list[dict] = dataclasses.field(default_factory=list, repr=False)

    @property
    def optimal(self) -> bool:
        return self.status == Status.OPTIMAL


class ConicBuilder:
    """Incremental assembly of a :class:`ConicProblem`.

    Variables are allocated block by block; equality rows are added as
    sparse triplets.  Only a thin layer: no expression objects.
    """

    def __init__(self):
        self.blocks: list[Block] = []
        self.names: dict[str, slice] = {}
        self._n = 0
        self._rows: list[np.ndarray] = []
        self._cols: list[np.ndarray] = []
        self._vals: list[np.ndarray] = []
        self._rhs: list[float] = []
        self._cost: dict[int, float] = {}

    @property
    def n(self) -> int:
        return self._n

    @property
    def m(self) -> int:
        return len(self._rhs)

    def add_block(self, kind: str, dim: int, name: str | None = None) -> np.ndarray:
        blk = Block(kind, dim)
        idx = np.arange(self._n, self._n + blk.size)
        self.blocks.append(blk)
        if name is not None:
            self.names[name] = slice(self._n, self._n + blk.size)
        self._n += blk.size
        return idx

    def add_variables(self, kind: str, count: int, name: str | None = None) -> np.ndarray:
        """Allocate ``count`` scalar variables of kind free or nonneg."""
        if kind not in ("free", "nonneg"):
            raise ValueError("add_variables only handles scalar kinds")
        if count == 0:
            return np.arange(self._n, self._n)
        return self.add_block(kind, count, name)

    def add_rows(self, coeffs: Sequence[tuple[int, np.ndarray]], rhs: np.ndarray) -> np.ndarray:
        """Add rows ``sum_j coeff_j * x[var_j] = rhs`` (one row per rhs entry).

        ``coeffs`` pairs a variable index with its column of coefficients
        over the new rows.
        """
        rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
        first = len(self._rhs)
        rows = np.arange(first, first + len(rhs))
        for var, col in coeffs:
            col = np.asarray(col, dtype=float)
            nz = np.flatnonzero(col)
            if nz.size:
                self._rows.append(rows[nz])
                self._cols.append(np.full(nz.size, var))
                self._vals.append(col[nz])
        self._rhs.extend(rhs.tolist())
        return rows

    def add_identity_rows(self, rows: np.ndarray, vars_: np.ndarray, scale: float = 1.0) -> None:
        self._rows.append(np.asarray(rows))
        self._cols.append(np.asarray(vars_))
        self._vals.append(np.full(len(rows), scale))

    def set_cost(self, var: int, value: float) -> None:
        self._cost[int(var)] = self._cost.get(int(var), 0.0) + float(value)

    def build(self) -> ConicProblem:
        c = np.zeros(self._n)
        for j, v in self._cost.items():
            c[j] = v
        if self._rows:
            r = np.concatenate(self._rows)
            cc = np.concatenate(self._cols)
            v = np.concatenate(self._vals)
        else:
            r = cc = np.zeros(0, dtype=int)
            v = np.zeros(0)
        A = sp.coo_matrix((v, (r, cc)), shape=(len(self._rhs), self._n)).tocsr()
        return ConicProblem(c, A, np.array(self._rhs), list(self.blocks), dict(self.names))
