"""Semidefinite upper bound on the worst-case expected optimal value over a
2-Wasserstein ball around the empirical distribution.

For samples ``xi_1..xi_N`` and radius ``eps`` the bound is

    min   lam*eps^2 + (1/N) sum_i (alpha_i + r*rho_i)
    s.t.  alpha_i g1 g1' - H_i(lam) + E' Diag(u_i) E + sum_j v_ij Q_j + rho_i I
              in IA(Xi_hat x R^n_+)            for every sample i
          lam >= 0, rho_i >= 0

with the ``rho`` terms dropped when no trace bound ``r`` is given.

The free ``u`` multipliers leave the cone program without a strictly
feasible dual, which stalls interior-point methods. By default the model is
posed on the face instead: with ``V`` an orthonormal basis of ``null(E)``
only ``V'MV`` must be PSD, and ``u`` disappears. Both forms have the same
optimal value (Finsler's lemma); a uniform ``u = t*1`` making ``M`` itself
PSD is recovered after the solve.

At ``eps = 0`` the same happens to ``lam``: ``-K_i = L_i'L_i`` with rows
``e_l - xi_il e_1``, and ``lam`` has no finite optimum. The face basis then
spans ``null([E; L_i])`` per sample and ``lam`` is recovered like ``u``.

For ``eps > 0`` each sample's face basis is premultiplied by the congruence of
``sample_frame``, which centres the uncertainty block at the sample and scales
it by ``eps`` clipped to ``[FRAME_FLOOR, 1]``. The feasible set is unchanged
but small radii no longer leave the PSD blocks with eigenvalues of order
``eps^2``. Radii strictly between 0 and about ``FRAME_FLOOR / 10`` are still
ill-conditioned; their solves typically stop with a ``numerical`` status and
are reported as not usable rather than passed on.
"""

from __future__ import annotations

import dataclasses
import logging
import time

import numpy as np
import scipy.linalg as sla

from .cones import IAMembership, SymAffine, copositivity_spot_check, emit_membership
from .model import (
    Dataset,
    DeterministicOracle,
    MixedBinaryProgram,
    drop_dependent_rows,
    homogenize,
)
from .solver import ConicBuilder, ConicProblem, Status, solve

log = logging.getLogger(__name__)

NEAR_OPTIMAL_GAP = 1e-5
NEAR_OPTIMAL_FEAS = 1e-7
FRAME_FLOOR = 1e-3  # smallest scale of the sample frame


class BoundError(RuntimeError):
    pass


@dataclasses.dataclass
class BoundModel:
    problem: ConicProblem
    lam: int  # -1 when eliminated at eps = 0
    alpha: np.ndarray
    u: np.ndarray  # (N, m)
    v: np.ndarray  # (N, |B|)
    rho: np.ndarray | None
    targets: list[SymAffine]
    memberships: list[IAMembership]
    epsilon: float
    r: float | None
    E: np.ndarray
    bases: list[np.ndarray] | None = None
    L: np.ndarray | None = None  # (N, k-1, d) when lam is eliminated


@dataclasses.dataclass
class BoundResult:
    value: float
    lam: float
    alpha: np.ndarray
    status: Status
    epsilon: float
    N: int
    r: float | None
    iterations: int
    runtime_ms: float
    primal_residual: float
    dual_residual: float
    gap: float
    residual_scale: float = 1.0
    lower: float = float("nan")  # dual objective
    spot_check_worst: np.ndarray | None = None
    spot_check_passed: bool | None = None
    constraint_matrices: list[np.ndarray] | None = dataclasses.field(default=None, repr=False)

    @property
    def certified(self) -> bool:
        return self.status == Status.OPTIMAL and self.spot_check_passed is not False

    def bracket(self) -> tuple[float, float] | None:
        """``(lower, upper)`` enclosing the optimal value when both residuals
        are within tolerance, else ``None``."""
        tol = NEAR_OPTIMAL_FEAS * self.residual_scale
        if self.primal_residual <= tol and self.dual_residual <= tol and np.isfinite(self.lower):
            return min(self.lower, self.value), self.value
        return None

    @property
    def usable(self) -> bool:
        """Optimal, or a primal-feasible iterate within ``NEAR_OPTIMAL_GAP``.

        The objective at a primal-feasible point of the minimization is
        itself a valid upper bound, so a stalled but accurate solve is not a
        failure for coverage purposes.
        """
        if self.status == Status.OPTIMAL:
            return True
        return (
            self.status in (Status.NUMERICAL, Status.MAX_ITER)
            and np.isfinite(self.value)
            and self.primal_residual <= NEAR_OPTIMAL_FEAS * self.residual_scale
            and self.gap <= NEAR_OPTIMAL_GAP
        )

    def to_json(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "N": self.N,
            "value": self.value,
            "lambda": self.lam,
            "status": self.status.value,
            "runtime_ms": self.runtime_ms,
        }


def _check_inputs(prog: MixedBinaryProgram, dataset: Dataset, epsilon: float, r):
    if epsilon < 0 or not np.isfinite(epsilon):
        raise ValueError("epsilon must be a finite nonnegative number")
    if r is not None and not r > 0:
        raise ValueError("trace bound r must be positive")
    if prog.binary_set and not prog.bounds_implied:
        raise ValueError("binary bounds not enforced; call enforce_binary_bounds first")
    if dataset.k != prog.k:
        raise ValueError(f"dataset dimension {dataset.k} does not match k={prog.k}")


def build(
    prog: MixedBinaryProgram,
    dataset: Dataset,
    epsilon: float,
    r: float | None = None,
    reduce_face: bool = True,
) -> BoundModel:
    """Assemble the standard-form cone program of the bound.

    ``reduce_face=False`` keeps the explicit ``u`` multipliers.
    """
    r = prog.support.r if r is None else r
    _check_inputs(prog, dataset, epsilon, r)
    prog = drop_dependent_rows(prog)
    hd = homogenize(prog, dataset)
    N = dataset.N
    m = prog.m
    B = prog.binary_set
    d = prog.k + prog.n
    fold_lam = reduce_face and epsilon == 0
    L = None
    if fold_lam:
        k = prog.k
        L = np.zeros((N, k - 1, d))
        L[:, :, 1:k] = np.eye(k - 1)
        L[:, :, 0] = -dataset.samples[:, 1:]
        bases = [sla.null_space(np.vstack([hd.E, L[i]])) for i in range(N)]
    elif reduce_face:
        V = sla.null_space(hd.E) if m else np.eye(d)
        bases = [sample_frame(dataset.samples[i], d, epsilon) @ V for i in range(N)]
    else:
        bases = None
    mu = 0 if bases is not None else m

    bld = ConicBuilder()
    lam = -1
    if not fold_lam:
        lam = int(bld.add_variables("nonneg", 1, "lambda")[0])
        bld.set_cost(lam, epsilon**2)
    alpha = np.zeros(N, dtype=int)
    u = np.zeros((N, mu), dtype=int)
    v = np.zeros((N, len(B)), dtype=int)
    rho = np.zeros(N, dtype=int) if r is not None else None
    targets, memberships = [], []
    G1 = np.outer(hd.g1, hd.g1)
    ErE = [np.outer(hd.E[row], hd.E[row]) for row in range(m)]
    Qs = [hd.Q[j] for j in B]
    eye = np.eye(d)
    for i in range(N):
        free = bld.add_variables("free", 1 + mu + len(B))
        alpha[i] = free[0]
        u[i] = free[1 : 1 + mu]
        v[i] = free[1 + mu :]
        bld.set_cost(alpha[i], 1.0 / N)
        terms = [(int(alpha[i]), G1)]
        if not fold_lam:
            terms.append((lam, -hd.K[i]))
        terms += [(int(u[i, row]), ErE[row]) for row in range(mu)]
        terms += [(int(v[i, j]), Qs[j]) for j in range(len(B))]
        if rho is not None:
            rho[i] = bld.add_variables("nonneg", 1)[0]
            bld.set_cost(rho[i], r / N)
            terms.append((int(rho[i]), eye))
        target = SymAffine(-hd.H_const, terms)
        targets.append(target)
        basis = None if bases is None else bases[i]
        memberships.append(emit_membership(bld, target, prog.support, basis))
    problem = bld.build()
    return BoundModel(
        problem, lam, alpha, u, v, rho, targets, memberships, float(epsilon), r, hd.E, bases, L
    )


def sample_frame(xi: np.ndarray, d: int, epsilon: float) -> np.ndarray:
    """Congruence ``T`` with ``(1, eta, x) -> (1, xi + s*eta, x)`` with ``s = eps`` clipped to [FRAME_FLOOR, 1].

    Parametrising the PSD part as ``T'MT`` keeps the deviations from the sample,
    which are of order ``eps`` in the worst-case moments, at unit scale.  ``T``
    fixes ``e_1`` and the ``x`` block, so ``E T = E`` and ``T null(E) = null(E)``.
    """
    k = xi.size
    s = min(max(epsilon, FRAME_FLOOR), 1.0)
    T = np.eye(d)
    T[1:k, 0] = xi[1:]
    T[1:k, 1:k] *= s
    return T


def recover_multiplier(
    M0: np.ndarray, E: np.ndarray, basis: np.ndarray, margin: float = 1e-9, singular_tol: float = 1e-7
) -> float:
    """Smallest ``t`` (plus a margin) with ``M0 + t E'E`` PSD, given ``V'M0V`` PD
    and ``V`` any basis of ``null(E)``.

    Eigenvalues of ``V'M0V`` down to ``-singular_tol`` (relative to ``M0``)
    are treated as rounding and shifted away first; ``inf`` is returned below
    that.
    """
    if E.shape[0] == 0:
        return 0.0
    V = basis
    U = sla.orth(E.T)
    A = V.T @ M0 @ V
    A = 0.5 * (A + A.T)
    Bm = U.T @ M0 @ V
    C = U.T @ M0 @ U
    G = U.T @ E.T @ E @ U
    # near an optimum V'M0V can be singular up to the equality residual;
    # shift such rounding-level defects away, give up on anything larger
    lo = float(np.linalg.eigvalsh(A)[0]) if A.size else 1.0
    floor = 1e-12 * (1.0 + np.abs(M0).max())
    if lo < floor:
        if lo < -singular_tol * (1.0 + np.abs(M0).max()):
            return np.inf
        A = A + (floor - lo) * np.eye(A.shape[0])
    try:
        LA = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        return np.inf
    X = sla.solve_triangular(LA, Bm.T, lower=True)
    schur = X.T @ X - C  # need t*G >= B A^{-1} B' - C
    LG = np.linalg.cholesky(0.5 * (G + G.T))
    Z = sla.solve_triangular(LG, sla.solve_triangular(LG, schur, lower=True).T, lower=True)
    t = float(np.linalg.eigvalsh(0.5 * (Z + Z.T)).max())
    return max(t, 0.0) * (1 + 1e-8) + margin


def recover_eliminated(model: BoundModel, x: np.ndarray) -> tuple[list[np.ndarray], float]:
    """Per-sample constraint matrices at ``x`` and the value of ``lam``.

    On a reduced face the eliminated multipliers are set to the smallest
    uniform value making every ``M`` PSD (one shared value for ``lam``).
    """
    mats = [t.evaluate(x) for t in model.targets]
    lam = float(x[model.lam]) if model.lam >= 0 else 0.0
    if model.bases is None:
        return mats, lam
    ts = []
    for i, (G, mem) in enumerate(zip(mats, model.memberships)):
        dec = mem.decomposition(x, G)
        F = model.E if model.L is None else np.vstack([model.E, model.L[i]])
        t = recover_multiplier(dec.M, F, model.bases[i])
        if not np.isfinite(t):
            log.warning("reduced PSD block is singular; multiplier recovery failed for sample %d", i)
            t = 0.0
        ts.append(t)
    EtE = model.E.T @ model.E
    if model.L is None:
        return [G + t * EtE for G, t in zip(mats, ts)], lam
    # one lam for all samples; any t >= the per-sample minimum works
    lam = max(ts)
    out = [G + lam * (EtE + model.L[i].T @ model.L[i]) for i, G in enumerate(mats)]
    return out, lam


def solve_bound(
    prog: MixedBinaryProgram,
    dataset: Dataset,
    epsilon: float,
    r: float | None = None,
    *,
    spot_check: bool = True,
    spot_trials: int = 10_000,
    spot_tol: float = 1e-6,
    seed: int = 0,
    keep_matrices: bool = False,
    **solver_opts,
) -> BoundResult:
    """Solve the bound; raises :class:`BoundError` on infeasible/unbounded status.

    ``max_iter`` and ``numerical`` statuses return the last iterate's
    objective, which is then not certified.
    """
    t0 = time.perf_counter()
    model = build(prog, dataset, epsilon, r)
    sol = solve(model.problem, **solver_opts)
    if sol.status in (Status.INFEASIBLE, Status.UNBOUNDED):
        raise BoundError(f"bound problem reported {sol.status.value}")
    x = sol.x
    worst = None
    passed = None
    mats, lam = recover_eliminated(model, x)
    if spot_check:
        rng = np.random.default_rng(seed)
        checks = [copositivity_spot_check(G, prog.support, spot_trials, spot_tol, rng) for G in mats]
        worst = np.array([c.worst for c in checks])
        passed = all(c.passed for c in checks)
        if not passed:
            log.warning("copositivity spot check failed (worst %.3e)", worst.min())
    result = BoundResult(
        value=float(sol.primal_objective),
        lam=lam,
        alpha=x[model.alpha].copy(),
        status=sol.status,
        epsilon=float(epsilon),
        N=dataset.N,
        r=model.r,
        iterations=sol.iterations,
        runtime_ms=(time.perf_counter() - t0) * 1e3,
        primal_residual=sol.primal_residual,
        dual_residual=sol.dual_residual,
        gap=sol.gap,
        residual_scale=1.0 + np.linalg.norm(model.problem.b) + np.linalg.norm(model.problem.c),
        lower=float(sol.dual_objective),
        spot_check_worst=worst,
        spot_check_passed=passed,
        constraint_matrices=mats if keep_matrices else None,
    )
    if sol.status != Status.OPTIMAL:
        level = logging.INFO if result.usable else logging.WARNING
        log.log(level, "bound solve (eps=%g, N=%d) ended with status %s after %d iterations (gap %.1e)",
                epsilon, dataset.N, sol.status.value, sol.iterations, sol.gap)
    return result


def saa_value(prog: MixedBinaryProgram, dataset: Dataset, oracle: DeterministicOracle | None = None) -> float:
    """Average of the exact per-sample optimal values."""
    oracle = oracle or DeterministicOracle(prog)
    return float(np.mean(oracle.values(dataset.samples)))
