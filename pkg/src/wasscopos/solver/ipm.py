"""Primal-dual path-following method for standard-form cone programs.

Mehrotra predictor-corrector with Nesterov-Todd scaling.  Each iteration
factors the regularized augmented system

    [ -D^{-1} - dI    A' ] [dx]   [r1]
    [   A             dI ] [dy] = [r2]

once (D^{-1} is zero on free variables) and uses it for both the predictor
and the corrector, with iterative refinement against the unregularized
matrix.  Blocks with many samples produce a block-diagonal (1,1) part, which
the sparse factorization exploits directly.  The regularized matrix is
quasi-definite, so the sparse path first factors it without pivoting (far
less fill-in) and falls back to threshold pivoting only when iterative
refinement does not reach the target accuracy.
"""

from __future__ import annotations

import logging
import warnings
import time

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ._cones import NonnegGroup, NumericalError, PsdGroup, SocGroup
from .problem import ConicProblem, ConicSolution, Status

log = logging.getLogger(__name__)

DENSE_KKT_LIMIT = 600
REG = 1e-11
PRESOLVE_DENSE_LIMIT = 4_000_000
STALL_ITERS = 25


def independent_rows(A, b, tol: float = 1e-9):
    """Indices of a maximal independent row subset of ``A``.

    Returns ``(keep, consistent)``.  A row that owns a column no other row
    touches is always independent, so matrices where every row has such a
    private column skip the dense rank-revealing QR.
    """
    m, n = A.shape
    if m == 0:
        return np.arange(0), True
    As = sp.csc_matrix(A)
    colcount = np.diff(As.indptr)
    private = As[:, colcount == 1]
    private.eliminate_zeros()
    covered = np.unique(private.tocoo().row)
    if covered.size == m:
        return np.arange(m), True
    if m * n > PRESOLVE_DENSE_LIMIT:
        log.debug("presolve skipped: %d x %d too large for dense QR", m, n)
        return np.arange(m), True
    Ad = As.toarray()
    _, R, piv = sla.qr(Ad.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0:
        keep = np.arange(0)
    else:
        rank = int(np.sum(diag > tol * diag[0]))
        keep = np.sort(piv[:rank])
    if keep.size == m:
        return keep, True
    # dropped rows must be implied by the kept ones
    Ak = Ad[keep]
    coef, *_ = np.linalg.lstsq(Ak.T, Ad.T, rcond=None)
    resid = b - coef.T @ b[keep]
    consistent = bool(np.max(np.abs(resid)) <= 1e-8 * (1 + np.max(np.abs(b))))
    return keep, consistent


def _groups(blocks, offsets):
    free, nonneg = [], []
    soc: dict[int, list] = {}
    psd: dict[int, list] = {}
    for blk, off in zip(blocks, offsets):
        idx = np.arange(off, off + blk.size)
        if blk.kind == "free":
            free.append(idx)
        elif blk.kind == "nonneg":
            nonneg.append(idx)
        elif blk.kind == "soc":
            soc.setdefault(blk.dim, []).append(idx)
        else:
            psd.setdefault(blk.dim, []).append(idx)
    groups = []
    if nonneg:
        groups.append(NonnegGroup(np.concatenate(nonneg)))
    for q in sorted(soc):
        groups.append(SocGroup(np.array(soc[q])))
    for q in sorted(psd):
        groups.append(PsdGroup(np.array(psd[q]), q))
    free_idx = np.concatenate(free) if free else np.zeros(0, dtype=int)
    return free_idx, groups


class _KKT:
    """Augmented-system assembly and factorization."""

    def __init__(self, A: sp.csr_matrix, n: int, groups, free_idx, reg: float):
        self.A = A
        self.n = n
        self.m = A.shape[0]
        self.groups = groups
        self.free_idx = free_idx
        self.reg = reg
        coo = A.tocoo()
        self._a_rows = np.concatenate([coo.row + n, coo.col])
        self._a_cols = np.concatenate([coo.col, coo.row + n])
        self._a_vals = np.concatenate([coo.data, coo.data])
        self._blk_rows, self._blk_cols = [], []
        for g in groups:
            idx = g.idx
            t = idx.shape[1]
            self._blk_rows.append(np.broadcast_to(idx[:, :, None], (idx.shape[0], t, t)).ravel())
            self._blk_cols.append(np.broadcast_to(idx[:, None, :], (idx.shape[0], t, t)).ravel())
        N = n + self.m
        self._diag_idx = np.arange(N)
        self._diag_reg = np.concatenate([np.full(n, -reg), np.full(self.m, reg)])
        self.dense = N <= DENSE_KKT_LIMIT
        self._pos = None  # sparse path: position of each unknown in the reordered system

    def factor(self, dinv_blocks):
        N = self.n + self.m
        rows = [self._a_rows, self._diag_idx]
        cols = [self._a_cols, self._diag_idx]
        vals = [self._a_vals, self._diag_reg]
        for r, c, blocks in zip(self._blk_rows, self._blk_cols, dinv_blocks):
            rows.append(r)
            cols.append(c)
            vals.append(-blocks.ravel())
        rows, cols = np.concatenate(rows), np.concatenate(cols)
        vals = np.concatenate(vals)
        # exact cancellations (degenerate faces, integer data) can make the
        # factor singular; stronger quasi-definite regularization fixes the
        # pivots and refinement against the true matrix recovers accuracy
        boost = 0.0
        base = max(1e3 * self.reg, 1e-10 * (1.0 + np.abs(vals).max()))
        for attempt in range(4):
            sign = np.sign(self._diag_reg)
            self._reg_eff = self._diag_reg + boost * sign
            try:
                self._factor_with(rows, cols, np.concatenate([vals, boost * sign]), N)
                return
            except NumericalError:
                if attempt == 3:
                    raise
                boost = base * 100.0**attempt
                log.debug("singular KKT factor; regularization raised to %.1e", boost)

    def _factor_with(self, rows, cols, vals, N):
        rows = np.concatenate([rows, self._diag_idx])
        cols = np.concatenate([cols, self._diag_idx])
        self.pivoting = self.dense
        try:
            if self.dense:
                self.K = sp.coo_matrix((vals, (rows, cols)), shape=(N, N)).tocsc()
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", sla.LinAlgWarning)
                    self._lu = sla.lu_factor(self.K.toarray(), check_finite=True)
                piv = np.diag(self._lu[0])
                if not np.all(np.isfinite(piv)) or np.any(piv == 0.0):
                    raise NumericalError("singular KKT matrix")
                return
            if self._pos is None:
                # the pattern never changes, so the ordering is computed once
                K0 = sp.coo_matrix((vals, (rows, cols)), shape=(N, N)).tocsc()
                lu = spla.splu(
                    K0, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                    options=dict(SymmetricMode=True),
                )
                self._pos = np.asarray(lu.perm_c)
            pos = self._pos
            self.K = sp.coo_matrix((vals, (pos[rows], pos[cols])), shape=(N, N)).tocsc()
            self._lu = self._splu(0.0)
        except (RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
            raise NumericalError(f"KKT factorization failed: {exc}") from exc

    def _splu(self, thresh):
        return spla.splu(
            self.K, permc_spec="NATURAL", diag_pivot_thresh=thresh,
            options=dict(SymmetricMode=True),
        )

    def _repivot(self):
        log.debug("KKT refinement stalled; refactoring with pivoting")
        try:
            self._lu = self._splu(0.1)
        except RuntimeError as exc:
            raise NumericalError(f"KKT factorization failed: {exc}") from exc
        self.pivoting = True

    def _raw_solve(self, r):
        if self.dense:
            return sla.lu_solve(self._lu, r)
        return self._lu.solve(r)

    def solve(self, r1, r2, refine: int = 3):
        rhs = np.concatenate([r1, r2])
        reg = self._reg_eff
        if not self.dense:
            rhs_p = np.empty_like(rhs)
            rhs_p[self._pos] = rhs
            reg_p = np.empty_like(reg)
            reg_p[self._pos] = reg
            rhs, reg = rhs_p, reg_p
        scale = 1 + np.linalg.norm(rhs, np.inf)
        while True:
            z = self._raw_solve(rhs)
            res_norm = np.inf
            for _ in range(refine + 1):
                # residual against the unregularized matrix
                res = rhs - (self.K @ z - reg * z)
                res_norm = np.linalg.norm(res, np.inf) if np.all(np.isfinite(res)) else np.inf
                if res_norm <= 1e-14 * scale or not np.isfinite(res_norm):
                    break
                z = z + self._raw_solve(res)
            if self.pivoting or res_norm <= 1e-9 * scale:
                break
            self._repivot()
        if not np.all(np.isfinite(z)):
            raise NumericalError("non-finite Newton direction")
        if not self.dense:
            z = z[self._pos]
        return z[: self.n], z[self.n :]


def _certificate(A, AT, b, c, x, y, s, tol: float = 1e-7):
    """Status backed by an approximate ray (unbounded) or Farkas vector (infeasible), if any.

    ``x`` and ``s`` are cone-interior iterates, so only the linear parts of
    the certificates need checking.
    """
    nx = np.linalg.norm(x)
    if nx > 0:
        d = x / nx
        cd = float(c @ d)
        if cd < -1e-6 * (1 + np.linalg.norm(c)) and np.linalg.norm(A @ d) <= tol * -cd:
            return Status.UNBOUNDED
    by = float(b @ y)
    if by > 0 and np.linalg.norm(AT @ y + s) <= tol * by:
        return Status.INFEASIBLE
    return None


def _initial_point(A, b, c, groups, free_idx, n):
    """Scaled identity start: x = xi*e, s = eta*e, y = 0."""
    x = np.zeros(n)
    s = np.zeros(n)
    As = sp.csc_matrix(A)
    row_b = 1.0 + np.abs(b)
    for g in groups:
        idx = g.idx
        sub = As[:, idx.ravel()]
        rownorm = np.sqrt(np.asarray(sub.multiply(sub).sum(axis=1)).ravel())
        size = idx.size
        ratio = np.max(row_b / (1.0 + rownorm)) if len(b) else 1.0
        xi = max(1.0, np.sqrt(size), ratio)
        colmax = np.sqrt(np.max(np.asarray(sub.multiply(sub).sum(axis=0)).ravel())) if len(b) else 0.0
        eta = max(1.0, np.sqrt(size), np.linalg.norm(c[idx.ravel()]), colmax)
        e = g.identity()
        x[idx] = xi * e
        s[idx] = eta * e
    return x, np.zeros(A.shape[0]), s


def solve(
    problem: ConicProblem,
    *,
    feas_tol: float = 1e-7,
    gap_tol: float = 1e-7,
    max_iter: int = 200,
    step_fraction: float = 0.99,
    presolve: bool = True,
    verbose: bool = False,
) -> ConicSolution:
    """Solve ``problem`` and return a :class:`ConicSolution`.

    Terminates when ``max(||r_p||, ||r_d||) <= feas_tol*(1+||b||+||c||)`` and
    the relative duality gap is at most ``gap_tol``.
    """
    t0 = time.perf_counter()
    c = problem.c
    n = problem.n
    A_full = sp.csr_matrix(problem.A)
    b_full = problem.b
    m_full = problem.m

    keep = np.arange(m_full)
    if presolve and m_full:
        keep, consistent = independent_rows(A_full, b_full)
        if not consistent:
            log.info("presolve found inconsistent equality rows")
            return ConicSolution(
                Status.INFEASIBLE, np.full(n, np.nan), np.full(m_full, np.nan), np.full(n, np.nan),
                np.nan, np.nan, np.inf, np.nan, np.nan, 0,
            )
    A = A_full[keep]
    b = b_full[keep]
    AT = A.T.tocsr()

    free_idx, groups = _groups(problem.blocks, problem.offsets())
    cone_mask = np.ones(n, dtype=bool)
    cone_mask[free_idx] = False
    nu = sum(g.degree for g in groups)

    kkt = _KKT(A, n, groups, free_idx, REG)
    x, y, s = _initial_point(A, b, c, groups, free_idx, n)

    bnorm = np.linalg.norm(b_full)
    cnorm = np.linalg.norm(c)
    feas_scale = 1.0 + bnorm + cnorm
    history: list[dict] = []
    status = Status.MAX_ITER
    it = 0
    best = (np.inf, x, y, s, 0)

    def pack(st, x, y, s, it):
        y_full = np.zeros(m_full)
        y_full[keep] = y
        rp = b_full - A_full @ x
        rd = c - AT @ y - s if m_full else c - s
        pobj = float(c @ x)
        dobj = float(b @ y)
        return ConicSolution(
            st, x.copy(), y_full, s.copy(), pobj, dobj,
            float(np.linalg.norm(rp)), float(np.linalg.norm(rd)),
            abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj)), it, history,
        )

    for it in range(max_iter + 1):
        rp = b - A @ x
        rd = c - AT @ y - s
        pobj = float(c @ x)
        dobj = float(b @ y)
        pres = float(np.linalg.norm(rp))
        dres = float(np.linalg.norm(rd))
        mu = float(x[cone_mask] @ s[cone_mask]) / max(nu, 1)
        relgap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        compl = mu * nu / (1.0 + abs(pobj) + abs(dobj))
        history.append(dict(iter=it, pobj=pobj, dobj=dobj, pres=pres, dres=dres, mu=mu, gap=relgap))
        if verbose:
            log.info("%3d  %+.8e  %+.8e  %.2e  %.2e  %.2e", it, pobj, dobj, pres, dres, relgap)
        merit = max(max(pres, dres) / (feas_tol * feas_scale), relgap / gap_tol, compl / gap_tol)
        if merit <= 1.0:
            status = Status.OPTIMAL
            break
        # divergence heuristics; all intended problems are feasible
        big = 1e8 * feas_scale
        if dobj > big and np.linalg.norm(AT @ y + s) <= 1e-6 * dobj:
            status = Status.INFEASIBLE
            break
        if -pobj > big and np.linalg.norm(A @ x) <= 1e-6 * -pobj:
            status = Status.UNBOUNDED
            break
        if merit < best[0]:
            best = (merit, x, y, s, it)
        elif it - best[4] >= STALL_ITERS:
            log.debug("no progress for %d iterations", STALL_ITERS)
            status = Status.NUMERICAL
            break
        if it == max_iter:
            break

        try:
            scal = [g.scaling(x[g.idx], s[g.idx]) for g in groups]
            kkt.factor([sc.dinv_blocks() for sc in scal])
            lam = [sc.lam for sc in scal]
            lamsq = [g.jprod(l, l) for g, l in zip(groups, lam)]

            def direction(rc):
                # rc: scaled complementarity target per group
                r1 = rd.copy()
                u = []
                for g, sc, l, r in zip(groups, scal, lam, rc):
                    ui = g.jdiv(l, r)
                    u.append(ui)
                    r1[g.idx] -= sc.from_dual_scaled(ui)
                dx, dy = kkt.solve(r1, rp)
                # taking ds from the dual equation keeps dual feasibility exact;
                # KKT solve error then lands in the complementarity term
                ds = rd - AT @ dy
                ds[free_idx] = 0.0
                ds_parts = [
                    (sc.to_primal_scaled(dx[g.idx]), sc.to_dual_scaled(ds[g.idx]))
                    for g, sc in zip(groups, scal)
                ]
                return dx, dy, ds, ds_parts

            def max_step(dx, ds):
                a = np.inf
                for g in groups:
                    a = min(a, g.max_step(x[g.idx], dx[g.idx]), g.max_step(s[g.idx], ds[g.idx]))
                return a

            # predictor
            dx_a, dy_a, ds_a, parts_a = direction([-l2 for l2 in lamsq])
            a_aff = min(1.0, max_step(dx_a, ds_a))
            mu_aff = float(
                (x[cone_mask] + a_aff * dx_a[cone_mask]) @ (s[cone_mask] + a_aff * ds_a[cone_mask])
            ) / max(nu, 1)
            sigma = float(np.clip((mu_aff / mu) ** 3, 0.0, 1.0)) if mu > 0 else 0.0

            # corrector
            rc = []
            for g, l2, (dxt, dst) in zip(groups, lamsq, parts_a):
                rc.append(sigma * mu * g.identity() - l2 - g.jprod(dxt, dst))
            dx, dy, ds, _ = direction(rc)
            alpha = min(1.0, step_fraction * max_step(dx, ds))
            if alpha < 0.1:
                # the second-order term can spoil a poorly centred iterate;
                # retry with a plain centring direction
                sig = max(sigma, 0.5)
                rc = [sig * mu * g.identity() - l2 for g, l2 in zip(groups, lamsq)]
                dx2, dy2, ds2, _ = direction(rc)
                alpha2 = min(1.0, step_fraction * max_step(dx2, ds2))
                if alpha2 > alpha:
                    dx, dy, ds, alpha = dx2, dy2, ds2, alpha2
        except NumericalError as exc:
            log.debug("numerical failure at iteration %d: %s", it, exc)
            status = Status.NUMERICAL
            break
        if not np.isfinite(alpha) or alpha < 1e-12:
            status = Status.NUMERICAL
            break
        x = x + alpha * dx
        y = y + alpha * dy
        s = s + alpha * ds
        s[free_idx] = 0.0

    if status in (Status.NUMERICAL, Status.MAX_ITER):
        status = _certificate(A, AT, b, c, x, y, s) or status
    if status in (Status.OPTIMAL, Status.INFEASIBLE, Status.UNBOUNDED) or not np.isfinite(best[0]):
        sol = pack(status, x, y, s, it)
    else:
        # report the most accurate iterate seen rather than the last one
        sol = pack(status, best[1], best[2], best[3], it)
    log.debug(
        "solve: status=%s iters=%d pobj=%.10g time=%.3fs", sol.status.value, sol.iterations,
        sol.primal_objective, time.perf_counter() - t0,
    )
    return sol
