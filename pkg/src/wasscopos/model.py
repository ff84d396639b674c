"""Uncertain mixed 0-1 linear programs and their exact deterministic oracle.

An instance is ``v(xi) = max{(F xi)'x : Ax = b, x >= 0, x_j in {0,1} (j in B)}``
with ``xi`` ranging over the slice ``xi_1 = 1`` of a closed convex cone.
"""

from __future__ import annotations

import dataclasses
import itertools
import json
import logging
from pathlib import Path
from typing import Iterable

import numpy as np
import scipy.linalg as sla

from .solver import Status, independent_rows, optimal_basis, solve_lp

log = logging.getLogger(__name__)

ROW_TOL = 1e-9
SUPPORT_KINDS = ("nonneg_orthant", "polyhedral", "soc")


class DimensionError(ValueError):
    """Raised when matrix shapes disagree; the message names the matrix."""


class InfeasibleError(ValueError):
    pass


class UnboundedError(ValueError):
    pass


@dataclasses.dataclass(frozen=True, eq=False)
class SupportCone:
    """Homogenized support: ``{xi : P xi >= 0}`` or the second-order cone.

    ``kind`` is one of ``nonneg_orthant`` (P = I), ``polyhedral`` or ``soc``.
    ``r`` is an optional bound on ``||xi||^2 + ||x||^2`` used only when both
    the support slice and the feasible set are bounded.
    """

    kind: str
    k: int
    P: np.ndarray | None = None
    r: float | None = None

    def __post_init__(self):
        if self.kind not in SUPPORT_KINDS:
            raise ValueError(f"unknown support kind {self.kind!r}")
        if self.kind == "polyhedral":
            if self.P is None:
                raise DimensionError("polyhedral support needs P")
            P = np.atleast_2d(np.asarray(self.P, dtype=float))
            if P.shape[1] != self.k:
                raise DimensionError(f"P has {P.shape[1]} columns, expected k={self.k}")
            object.__setattr__(self, "P", P)
        elif self.kind == "soc" and self.k < 2:
            raise DimensionError("second-order support needs k >= 2")
        if self.r is not None and not self.r > 0:
            raise ValueError("trace bound r must be positive")

    @property
    def matrix(self) -> np.ndarray:
        """Constraint matrix of a polyhedral support (identity for the orthant)."""
        if self.kind == "nonneg_orthant":
            return np.eye(self.k)
        if self.kind == "polyhedral":
            return self.P
        raise TypeError("second-order support has no constraint matrix")

    def contains(self, xi, tol: float = 1e-9) -> np.ndarray:
        xi = np.atleast_2d(xi)
        if self.kind == "soc":
            return np.linalg.norm(xi[:, 1:], axis=1) <= xi[:, 0] + tol * (1 + np.abs(xi[:, 0]))
        val = xi @ self.matrix.T
        return np.all(val >= -tol * (1 + np.abs(xi).max(axis=1, keepdims=True)), axis=1)

    def dual_contains(self, s, tol: float = 1e-9) -> np.ndarray:
        """Membership in the dual cone (nonnegative combinations of rows of P, or SOC)."""
        s = np.atleast_2d(s)
        if self.kind == "soc":
            return self.contains(s, tol)
        if self.kind == "nonneg_orthant":
            return np.all(s >= -tol, axis=1)
        from scipy.optimize import nnls

        P = self.matrix
        out = []
        for row in s:
            _, res = nnls(P.T, row)
            out.append(res <= tol * (1 + np.linalg.norm(row)))
        return np.array(out)

    def sample(self, count: int, rng: np.random.Generator, max_tries: int = 200) -> np.ndarray:
        """Random points of the cone (not of the slice), some on the boundary."""
        k = self.k
        if self.kind == "nonneg_orthant":
            pts = np.abs(rng.standard_normal((count, k)))
            mask = rng.random((count, k)) < 0.3
            pts[mask] = 0.0
            return pts
        if self.kind == "soc":
            t = np.abs(rng.standard_normal(count)) + 1e-3
            d = rng.standard_normal((count, k - 1))
            d /= np.linalg.norm(d, axis=1, keepdims=True)
            rad = np.where(rng.random(count) < 0.3, 1.0, rng.random(count))
            return np.column_stack([t, d * (t * rad)[:, None]])
        P = self.matrix
        got: list[np.ndarray] = []
        have = 0
        for _ in range(max_tries):
            cand = rng.standard_normal((max(4 * count, 64), k))
            cand[:, 0] = np.abs(cand[:, 0]) * 3
            ok = np.all(cand @ P.T >= 0, axis=1)
            got.append(cand[ok])
            have += int(ok.sum())
            if have >= count:
                break
        pts = np.concatenate(got) if got else np.zeros((0, k))
        if pts.shape[0] == 0:
            raise RuntimeError("could not sample the polyhedral support by rejection")
        if pts.shape[0] < count:
            # nonnegative combinations of accepted points stay in the cone
            wts = rng.random((count, pts.shape[0]))
            pts = wts @ pts
        return pts[:count]

    def to_json(self) -> dict:
        out: dict = {"type": self.kind}
        if self.kind == "polyhedral":
            out["P"] = self.P.tolist()
        return out


@dataclasses.dataclass(frozen=True, eq=False)
class MixedBinaryProgram:
    """``max (F xi)'x  s.t.  Ax = b, x >= 0, x_j binary for j in binary_set``.

    ``binary_set`` holds 0-based column indices.  ``bounds_implied`` marks
    instances where ``0 <= x_j <= 1`` already follows from ``Ax = b, x >= 0``
    (network flows); :func:`enforce_binary_bounds` leaves those unchanged.
    """

    A: np.ndarray
    b: np.ndarray
    F: np.ndarray
    binary_set: tuple[int, ...]
    support: SupportCone
    bounds_implied: bool = False

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        F = np.atleast_2d(np.asarray(self.F, dtype=float))
        if A.shape[0] != b.shape[0]:
            raise DimensionError(f"A has {A.shape[0]} rows but b has length {b.shape[0]}")
        if F.shape[0] != A.shape[1]:
            raise DimensionError(f"F has {F.shape[0]} rows but A has {A.shape[1]} columns")
        if F.shape[1] != self.support.k:
            raise DimensionError(f"F has {F.shape[1]} columns but the support has k={self.support.k}")
        B = tuple(sorted(int(j) for j in self.binary_set))
        if len(set(B)) != len(B) or any(j < 0 or j >= A.shape[1] for j in B):
            raise DimensionError(f"binary_set {B} out of range for n={A.shape[1]}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "binary_set", B)

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def k(self) -> int:
        return self.F.shape[1]

    def objective(self, xi) -> np.ndarray:
        """Objective vectors ``F xi`` for one sample or a (S, k) batch."""
        return np.asarray(xi, dtype=float) @ self.F.T

    def replace(self, **kw) -> "MixedBinaryProgram":
        return dataclasses.replace(self, **kw)

    def assert_bounded(self) -> None:
        """Raise unless the feasible set is nonempty and bounded."""
        cont = [j for j in range(self.n) if j not in self.binary_set]
        # recession directions d >= 0, A d = 0 with d_B = 0
        if cont:
            sol = solve_lp(-np.ones(len(cont)), self.A[:, cont], np.zeros(self.m),
                           bounds=[(0.0, 1.0)] * len(cont))
            if not sol.optimal:
                raise RuntimeError(f"recession check failed: {sol.status.value}")
            if -sol.value > 1e-7:
                raise UnboundedError("feasible set is unbounded")
        DeterministicOracle(self).feasible_assignments()

    @classmethod
    def from_json(cls, data: dict) -> "MixedBinaryProgram":
        try:
            F = np.asarray(data["F"], dtype=float)
            sup = data.get("support", {"type": "nonneg_orthant"})
            support = SupportCone(sup["type"], F.shape[1], sup.get("P"), data.get("r"))
            binary = [int(j) - 1 for j in data.get("binary_set", [])]
            return cls(
                np.asarray(data["A"], dtype=float), np.asarray(data["b"], dtype=float), F,
                tuple(binary), support, bool(data.get("bounds_implied", False)),
            )
        except KeyError as exc:
            raise ValueError(f"instance JSON missing field {exc}") from exc

    @classmethod
    def load(cls, path) -> "MixedBinaryProgram":
        return cls.from_json(json.loads(Path(path).read_text()))

    def to_json(self) -> dict:
        out = {
            "A": self.A.tolist(),
            "b": self.b.tolist(),
            "F": self.F.tolist(),
            "binary_set": [j + 1 for j in self.binary_set],
            "support": self.support.to_json(),
        }
        if self.support.r is not None:
            out["r"] = self.support.r
        if self.bounds_implied:
            out["bounds_implied"] = True
        return out


@dataclasses.dataclass(frozen=True, eq=False)
class Dataset:
    """``N`` samples in homogenized coordinates (first column all ones)."""

    samples: np.ndarray

    def __post_init__(self):
        S = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if S.shape[0] == 0:
            raise ValueError("empty dataset")
        if not np.allclose(S[:, 0], 1.0, atol=1e-12, rtol=0):
            raise ValueError("every sample needs first coordinate 1")
        S = S.copy()
        S.setflags(write=False)
        object.__setattr__(self, "samples", S)

    @classmethod
    def from_raw(cls, zeta) -> "Dataset":
        """Prepend the homogenizing 1 to raw samples ``zeta`` (N, k-1)."""
        Z = np.atleast_2d(np.asarray(zeta, dtype=float))
        return cls(np.column_stack([np.ones(Z.shape[0]), Z]))

    @property
    def N(self) -> int:
        return self.samples.shape[0]

    @property
    def k(self) -> int:
        return self.samples.shape[1]

    def subset(self, idx: Iterable[int]) -> "Dataset":
        return Dataset(self.samples[np.asarray(list(idx), dtype=int)])

    @classmethod
    def from_json(cls, data: dict) -> "Dataset":
        Z = np.asarray(data["samples"], dtype=float)
        if Z.ndim != 2:
            raise ValueError("samples must be a list of lists")
        k = int(data.get("k", Z.shape[1] + 1))
        if Z.shape[1] + 1 != k:
            raise DimensionError(f"dataset declares k={k} but samples have {Z.shape[1]} entries")
        return cls.from_raw(Z)

    @classmethod
    def load(cls, path) -> "Dataset":
        return cls.from_json(json.loads(Path(path).read_text()))

    def to_json(self) -> dict:
        return {"k": self.k, "samples": self.samples[:, 1:].tolist()}


@dataclasses.dataclass(frozen=True, eq=False)
class HomogenizedData:
    """Matrix data of the copositive reformulation in ``z = (xi; x)`` space.

    ``H^i(lam) = H_const + lam * K[i]``; ``Q`` is keyed by 0-based binary
    column index.
    """

    E: np.ndarray
    g1: np.ndarray
    Q: dict[int, np.ndarray]
    H_const: np.ndarray
    K: np.ndarray  # (N, k+n, k+n)

    def H(self, i: int, lam: float) -> np.ndarray:
        return self.H_const + lam * self.K[i]


def homogenize(prog: MixedBinaryProgram, samples: Dataset) -> HomogenizedData:
    k, n = prog.k, prog.n
    S = samples.samples
    if S.shape[1] != k:
        raise DimensionError(f"samples have dimension {S.shape[1]} but F expects k={k}")
    d = k + n
    e1 = np.zeros(k)
    e1[0] = 1.0
    E = np.hstack([-np.outer(prog.b, e1), prog.A])
    g1 = np.zeros(d)
    g1[0] = 1.0
    H_const = np.zeros((d, d))
    H_const[:k, k:] = 0.5 * prog.F.T
    H_const[k:, :k] = 0.5 * prog.F
    K = np.zeros((S.shape[0], d, d))
    for i, xh in enumerate(S):
        blk = np.eye(k) - np.outer(xh, e1) - np.outer(e1, xh) + (xh @ xh) * np.outer(e1, e1)
        K[i, :k, :k] = -blk
    Q = {}
    for j in prog.binary_set:
        f = np.zeros(d)
        f[k + j] = 1.0
        Q[j] = np.outer(f, f) - 0.5 * np.outer(f, g1) - 0.5 * np.outer(g1, f)
    return HomogenizedData(E, g1, Q, H_const, K)


def enforce_binary_bounds(prog: MixedBinaryProgram, implied: bool | None = None) -> MixedBinaryProgram:
    """Add ``x_j + s_j = 1, s_j >= 0`` for each binary column.

    Skipped when the bounds are implied by the constraints (flag on the
    instance or the ``implied`` argument) or when there are no binaries.
    """
    implied = prog.bounds_implied if implied is None else implied
    B = prog.binary_set
    if implied or not B:
        return prog
    m, n, nb = prog.m, prog.n, len(B)
    A = np.zeros((m + nb, n + nb))
    A[:m, :n] = prog.A
    for r, j in enumerate(B):
        A[m + r, j] = 1.0
        A[m + r, n + r] = 1.0
    b = np.concatenate([prog.b, np.ones(nb)])
    F = np.vstack([prog.F, np.zeros((nb, prog.k))])
    return MixedBinaryProgram(A, b, F, B, prog.support, bounds_implied=True)


def drop_dependent_rows(prog: MixedBinaryProgram) -> MixedBinaryProgram:
    """Remove linearly dependent equality rows (pivoted QR, tolerance 1e-9)."""
    keep, consistent = independent_rows(prog.A, prog.b, ROW_TOL)
    if not consistent:
        raise InfeasibleError("equality constraints are inconsistent")
    if keep.size == prog.m:
        return prog
    return prog.replace(A=prog.A[keep], b=prog.b[keep])


class _Assignment:
    """One fixing of the binary columns and the cached vertex bases of its residual LP."""

    def __init__(self, values: np.ndarray, A: np.ndarray, b: np.ndarray):
        self.values = values
        self.A = A
        self.b = b
        self.bases: list = []


class DeterministicOracle:
    """Exact ``v(xi)`` by enumerating binary assignments and solving residual LPs.

    Residual LPs over the continuous columns share their feasible polytope
    across samples, so optimal vertex bases are cached and reused whenever
    their reduced costs certify optimality for a new objective.  Samples no
    cached basis certifies trigger a fresh interior-point solve.
    """

    def __init__(self, prog: MixedBinaryProgram, max_binaries: int = 22):
        if len(prog.binary_set) > max_binaries:
            raise ValueError(f"{len(prog.binary_set)} binaries exceed the enumeration limit")
        self.prog = prog
        self.B = np.array(prog.binary_set, dtype=int)
        self.C = np.array([j for j in range(prog.n) if j not in set(prog.binary_set)], dtype=int)
        self._assignments: list[_Assignment] | None = None

    def feasible_assignments(self) -> list[_Assignment]:
        if self._assignments is not None:
            return self._assignments
        prog, B, C = self.prog, self.B, self.C
        out = []
        for bits in itertools.product((0.0, 1.0), repeat=len(B)):
            a = np.array(bits)
            rhs = prog.b - prog.A[:, B] @ a
            if C.size == 0:
                if np.allclose(rhs, 0.0, atol=1e-9):
                    out.append(_Assignment(a, np.zeros((0, 0)), np.zeros(0)))
                continue
            AC = prog.A[:, C]
            keep, consistent = independent_rows(AC, rhs, ROW_TOL)
            if not consistent:
                continue
            AC, rhs = AC[keep], rhs[keep]
            if not self._phase_one(AC, rhs):
                continue
            out.append(_Assignment(a, AC, rhs))
        if not out:
            raise InfeasibleError("feasible set is empty")
        self._assignments = out
        return out

    @staticmethod
    def _phase_one(A: np.ndarray, b: np.ndarray) -> bool:
        m, nc = A.shape
        if m == 0:
            return True
        Aph = np.hstack([A, np.eye(m), -np.eye(m)])
        cph = np.concatenate([np.zeros(nc), np.ones(2 * m)])
        sol = solve_lp(cph, Aph, b)
        if not sol.optimal:
            raise RuntimeError(f"phase-one LP failed: {sol.status.value}")
        return sol.value <= 1e-7 * (1 + np.abs(b).max())

    def _residual_values(self, asg: _Assignment, CC: np.ndarray):
        """Optimal values (and vertices) of the residual LP for objectives CC (S, |C|)."""
        S = CC.shape[0]
        vals = np.full(S, np.nan)
        verts = np.zeros((S, self.C.size))
        if self.C.size == 0:
            vals[:] = 0.0
            return vals, verts
        todo = np.ones(S, dtype=bool)
        for basis in asg.bases:
            if not todo.any():
                break
            rows = np.flatnonzero(todo)
            ok = basis.optimal_mask(CC[rows])
            hit = rows[ok]
            vals[hit] = CC[hit] @ basis.x
            verts[hit] = basis.x
            todo[hit] = False
        while todo.any():
            i = int(np.flatnonzero(todo)[0])
            sol = solve_lp(-CC[i], asg.A, asg.b, feas_tol=1e-9, gap_tol=1e-10)
            if sol.status == Status.UNBOUNDED:
                raise UnboundedError("LP relaxation is unbounded; feasible set must be bounded")
            if sol.status == Status.INFEASIBLE:
                raise InfeasibleError("residual LP reported infeasible after phase one")
            if not sol.optimal:
                raise RuntimeError(f"deterministic LP failed: {sol.status.value}")
            basis = optimal_basis(asg.A, asg.b, sol.x, sol.z)
            if basis is not None and basis.optimal_mask(CC[i : i + 1])[0]:
                asg.bases.append(basis)
                rows = np.flatnonzero(todo)
                ok = basis.optimal_mask(CC[rows])
                hit = rows[ok]
                vals[hit] = CC[hit] @ basis.x
                verts[hit] = basis.x
                todo[hit] = False
            else:
                log.debug("no certified vertex basis; using interior-point value")
                vals[i] = CC[i] @ sol.x
                verts[i] = sol.x
                todo[i] = False
        return vals, verts

    def values(self, xi, return_x: bool = False):
        """``v(xi)`` for a (S, k) batch of samples (or a single sample)."""
        X = np.atleast_2d(np.asarray(xi, dtype=float))
        if X.shape[1] != self.prog.k:
            raise DimensionError(f"sample dimension {X.shape[1]} does not match k={self.prog.k}")
        if not np.allclose(X[:, 0], 1.0, atol=1e-9):
            raise ValueError("samples must have first coordinate 1")
        Cobj = self.prog.objective(X)
        best = np.full(X.shape[0], -np.inf)
        best_x = np.zeros((X.shape[0], self.prog.n))
        for asg in self.feasible_assignments():
            val, vert = self._residual_values(asg, Cobj[:, self.C])
            if self.B.size:
                val = val + Cobj[:, self.B] @ asg.values
            better = val > best
            best[better] = val[better]
            if return_x and better.any():
                best_x[np.ix_(better, self.B)] = asg.values
                best_x[np.ix_(better, self.C)] = vert[better]
        if return_x:
            return best, best_x
        return best


def solve_deterministic(prog: MixedBinaryProgram, xi) -> tuple[float, np.ndarray]:
    """Exact optimal value and a maximizer of the instance at one sample ``xi``."""
    xi = np.asarray(xi, dtype=float).ravel()
    vals, xs = DeterministicOracle(prog).values(xi[None, :], return_x=True)
    return float(vals[0]), xs[0]
