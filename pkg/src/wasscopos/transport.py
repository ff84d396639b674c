"""Discrete distributions on the support slice and the 2-Wasserstein distance."""

from __future__ import annotations

import dataclasses

import numpy as np

from .model import Dataset
from .solver import optimal_basis, solve_lp

WEIGHT_TOL = 1e-12


@dataclasses.dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    """Weighted atoms in homogenized coordinates (first coordinate 1).

    Weights are renormalized on construction when they are within 1e-9 of
    summing to one (JSON round trips); larger deviations are errors.
    """

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.atleast_2d(np.asarray(self.atoms, dtype=float))
        w = np.asarray(self.weights, dtype=float).ravel()
        if atoms.shape[0] != w.size or w.size == 0:
            raise ValueError("need one weight per atom and at least one atom")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        total = w.sum()
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {total}, not 1")
        if abs(total - 1.0) > WEIGHT_TOL:
            w = w / total
        if not np.allclose(atoms[:, 0], 1.0, atol=1e-12, rtol=0):
            raise ValueError("atoms need first coordinate 1")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", w)

    @property
    def k(self) -> int:
        return self.atoms.shape[1]

    def __len__(self) -> int:
        return self.atoms.shape[0]


def empirical(dataset: Dataset) -> DiscreteDistribution:
    """Uniform distribution over the samples; duplicates stay separate atoms."""
    N = dataset.N
    return DiscreteDistribution(dataset.samples, np.full(N, 1.0 / N))


def transport_lp(P: DiscreteDistribution, Q: DiscreteDistribution):
    """Cost vector, equality system and shape of the transportation LP."""
    if P.k != Q.k:
        raise ValueError(f"dimension mismatch: {P.k} vs {Q.k}")
    M, Mp = len(P), len(Q)
    diff = P.atoms[:, None, :] - Q.atoms[None, :, :]
    cost = np.sum(diff * diff, axis=2)
    A = np.zeros((M + Mp, M * Mp))
    for i in range(M):
        A[i, i * Mp : (i + 1) * Mp] = 1.0
    for j in range(Mp):
        A[M + j, j::Mp] = 1.0
    b = np.concatenate([P.weights, Q.weights])
    return cost.ravel(), A, b


def wasserstein2(P: DiscreteDistribution, Q: DiscreteDistribution) -> float:
    """2-Wasserstein distance between two discrete distributions.

    The transportation LP is solved by the interior-point LP path; the
    solution is then snapped to a vertex whose cost is evaluated exactly when
    it agrees with the interior-point value, which keeps ``W(P, P) = 0``
    exact.
    """
    c, A, b = transport_lp(P, Q)
    sol = solve_lp(c, A, b, feas_tol=1e-11, gap_tol=1e-11)
    if not sol.optimal:
        raise RuntimeError(f"transportation LP failed: {sol.status.value}")
    value = sol.value
    keep = np.arange(A.shape[0] - 1)  # one marginal row is implied by the others
    basis = optimal_basis(A[keep], b[keep], sol.x, sol.z)
    if basis is not None:
        v_vertex = float(c @ basis.x)
        if abs(v_vertex - value) <= 1e-7 * (1.0 + abs(value)):
            value = v_vertex
    return float(np.sqrt(max(value, 0.0)))
