"""Linear programs through the conic interior-point path.

``solve_lp`` maps variable bounds onto free/nonnegative blocks.
``optimal_basis`` turns an interior solution into a vertex certificate so
that repeated solves over the same polytope can be answered by a reduced-cost
test instead of a fresh interior-point run.
"""

from __future__ import annotations

import dataclasses
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .ipm import solve
from .problem import Block, ConicProblem, Status


@dataclasses.dataclass
class LPSolution:
    status: Status
    x: np.ndarray
    y: np.ndarray
    value: float
    primal_residual: float
    dual_residual: float
    iterations: int
    z: np.ndarray  # reduced costs c - A'y in the original variables

    @property
    def optimal(self) -> bool:
        return self.status == Status.OPTIMAL


def solve_lp(
    c,
    A,
    b,
    bounds: Sequence[tuple[float | None, float | None]] | None = None,
    **opts,
) -> LPSolution:
    """Minimize ``c'x`` subject to ``A x = b`` and per-variable ``bounds``.

    ``bounds`` defaults to ``(0, None)`` for every variable.  A bound of
    ``None`` means unbounded in that direction.
    """
    c = np.asarray(c, dtype=float).ravel()
    n = c.size
    A = np.zeros((0, n)) if A is None else A
    A = sp.csr_matrix(A) if sp.issparse(A) else np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] and A.shape[1] != n:
        raise ValueError("A and c have inconsistent sizes")
    if A.shape[0] == 0:
        A = np.zeros((0, n))
    b = np.asarray(b, dtype=float).ravel()
    if bounds is None:
        bounds = [(0.0, None)] * n
    if len(bounds) != n:
        raise ValueError("need one bound pair per variable")

    # x = shift + T w with w = (free part, nonneg part); upper-bounded boxes
    # get an extra slack and row.
    free_cols, nn_cols, shift, sign = [], [], np.zeros(n), np.ones(n)
    boxes = []
    for j, (lo, hi) in enumerate(bounds):
        lo = None if lo is None or lo == -np.inf else float(lo)
        hi = None if hi is None or hi == np.inf else float(hi)
        if lo is None and hi is None:
            free_cols.append(j)
        elif lo is not None:
            shift[j] = lo
            nn_cols.append(j)
            if hi is not None:
                if hi < lo:
                    raise ValueError(f"variable {j}: upper bound below lower bound")
                boxes.append((j, hi - lo))
        else:
            shift[j] = hi
            sign[j] = -1.0
            nn_cols.append(j)
    order = free_cols + nn_cols
    nb = len(boxes)
    Ad = A.toarray() if sp.issparse(A) else A
    m = Ad.shape[0]
    T = Ad[:, order] * sign[order]
    Aw = np.zeros((m + nb, n + nb))
    Aw[:m, :n] = T
    bw = np.concatenate([b - Ad @ shift, np.zeros(nb)])
    pos = {j: k for k, j in enumerate(order)}
    for r, (j, width) in enumerate(boxes):
        Aw[m + r, pos[j]] = 1.0
        Aw[m + r, n + r] = 1.0
        bw[m + r] = width
    cw = np.concatenate([c[order] * sign[order], np.zeros(nb)])
    blocks = []
    if free_cols:
        blocks.append(Block("free", len(free_cols)))
    if nn_cols or nb:
        blocks.append(Block("nonneg", len(nn_cols) + nb))
    prob = ConicProblem(cw, Aw, bw, blocks)
    sol = solve(prob, **opts)
    w = sol.x[:n]
    x = np.empty(n)
    x[order] = shift[order] + sign[order] * w
    y = sol.y[:m]
    z = c - Ad.T @ y if m else c.copy()
    return LPSolution(
        sol.status, x, y, float(c @ x), sol.primal_residual, sol.dual_residual, sol.iterations, z
    )


@dataclasses.dataclass(frozen=True)
class Basis:
    """A primal-feasible basis of ``{x >= 0 : A x = b}``.

    ``cols`` index the basic columns, ``x`` is the vertex, and ``BinvN`` maps
    basic objective coefficients to reduced costs of the nonbasic columns.
    """

    cols: np.ndarray
    nonbasic: np.ndarray
    x: np.ndarray
    BinvN: np.ndarray  # (m, n-m): B^{-1} N

    def optimal_mask(self, C: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        """For rows of ``C`` (objectives to *maximize*), is this vertex optimal?"""
        C = np.atleast_2d(C)
        if self.nonbasic.size == 0:
            return np.ones(C.shape[0], dtype=bool)
        red = C[:, self.nonbasic] - C[:, self.cols] @ self.BinvN
        scale = 1.0 + np.abs(C).max(axis=1)
        return np.all(red <= tol * scale[:, None], axis=1)


def optimal_basis(A: np.ndarray, b: np.ndarray, x: np.ndarray, z: np.ndarray, tol: float = 1e-7):
    """Recover a vertex basis from an interior optimum of ``max/min c'x, Ax=b, x>=0``.

    Columns are ranked by ``x_j - |z_j|`` and added greedily while they stay
    linearly independent.  Returns ``None`` when the resulting vertex is not
    primal feasible (e.g. a tie between optimal vertices left ``x`` strictly
    inside a face).  ``A`` must have full row rank.
    """
    A = np.asarray(A, dtype=float)
    m, n = A.shape
    if m == 0:
        return Basis(np.arange(0), np.arange(n), np.zeros(n), np.zeros((0, n)))
    order = np.argsort(-(x - np.abs(z)), kind="stable")
    cols: list[int] = []
    for j in order:
        trial = cols + [int(j)]
        if np.linalg.matrix_rank(A[:, trial], tol=1e-9 * max(1.0, np.abs(A).max())) == len(trial):
            cols = trial
            if len(cols) == m:
                break
    if len(cols) < m:
        return None
    cols_arr = np.array(sorted(cols))
    B = A[:, cols_arr]
    lu = sla.lu_factor(B)
    xb = sla.lu_solve(lu, b)
    if np.any(xb < -tol * (1 + np.abs(b).max())):
        return None
    xv = np.zeros(n)
    xv[cols_arr] = np.maximum(xb, 0.0)
    nonbasic = np.setdiff1d(np.arange(n), cols_arr)
    BinvN = sla.lu_solve(lu, A[:, nonbasic]) if nonbasic.size else np.zeros((m, 0))
    return Basis(cols_arr, nonbasic, xv, BinvN)
