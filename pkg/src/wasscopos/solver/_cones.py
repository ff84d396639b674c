"""Vectorized cone arithmetic for the interior-point method.

Blocks of one kind and order are grouped and processed as stacked arrays of
shape (B, size).  Each group supplies the Jordan algebra (product, division by
the scaled point, identity), the step-to-boundary computation, and the
Nesterov-Todd scaling ``T`` with ``T^{-T} x = T s = lam``.
"""

from __future__ import annotations

import numpy as np

from .problem import smat, svec, svec_len


class NumericalError(ArithmeticError):
    """An iterate left the cone interior or a factorization failed."""


def _smallest_positive_root(a, b, c):
    """Smallest alpha > 0 with a*alpha^2 + 2*b*alpha + c = 0, inf if none (c > 0)."""
    a = np.asarray(a, dtype=float)
    out = np.full(a.shape, np.inf)
    lin = np.abs(a) <= 1e-14 * (np.abs(b) + np.abs(c) + 1e-300)
    with np.errstate(divide="ignore", invalid="ignore"):
        # linear case: 2 b alpha + c = 0
        lin_root = np.where(b < 0, -c / (2 * b), np.inf)
        disc = b * b - a * c
        sq = np.sqrt(np.maximum(disc, 0.0))
        # stable pair of roots
        qq = -(b + np.copysign(sq, b))
        r1 = qq / a
        r2 = c / qq
        roots = np.stack([r1, r2])
        roots = np.where((roots > 0) & np.isfinite(roots), roots, np.inf)
        quad_root = np.where(disc >= 0, roots.min(axis=0), np.inf)
    out = np.where(lin, lin_root, quad_root)
    return out


class NonnegGroup:
    kind = "nonneg"

    def __init__(self, idx: np.ndarray):
        self.idx = np.asarray(idx, dtype=int).reshape(-1, 1)
        self.degree = self.idx.shape[0]

    def identity(self):
        return np.ones(self.idx.shape)

    def jprod(self, u, v):
        return u * v

    def jdiv(self, lam, r):
        return r / lam

    def max_step(self, x, dx):
        neg = dx < 0
        if not neg.any():
            return np.inf
        with np.errstate(over="ignore"):
            return float(np.min(-x[neg] / dx[neg]))

    def interior(self, x):
        return bool(np.all(x > 0))

    def scaling(self, x, s):
        return _NonnegScaling(x, s)


class _NonnegScaling:
    def __init__(self, x, s):
        if np.any(x <= 0) or np.any(s <= 0):
            raise NumericalError("nonnegative iterate left the interior")
        self.d = np.sqrt(x / s)
        self.lam = np.sqrt(x * s)

    def to_dual_scaled(self, v):
        return self.d * v

    def to_primal_scaled(self, v):
        return v / self.d

    def from_primal_scaled(self, v):
        return self.d * v

    def from_dual_scaled(self, v):
        return v / self.d

    def dinv_blocks(self):
        # (B, 1, 1)
        return (1.0 / self.d**2)[:, :, None]


class SocGroup:
    kind = "soc"

    def __init__(self, idx: np.ndarray):
        self.idx = np.asarray(idx, dtype=int)
        self.q = self.idx.shape[1]
        self.degree = self.idx.shape[0]
        self.J = np.diag([1.0] + [-1.0] * (self.q - 1))

    def identity(self):
        e = np.zeros(self.idx.shape)
        e[:, 0] = 1.0
        return e

    @staticmethod
    def jdet(u):
        return u[:, 0] ** 2 - np.sum(u[:, 1:] ** 2, axis=1)

    def jprod(self, u, v):
        out = np.empty_like(u)
        out[:, 0] = np.sum(u * v, axis=1)
        out[:, 1:] = u[:, :1] * v[:, 1:] + v[:, :1] * u[:, 1:]
        return out

    def jdiv(self, lam, r):
        det = self.jdet(lam)
        out = np.empty_like(r)
        out[:, 0] = (lam[:, 0] * r[:, 0] - np.sum(lam[:, 1:] * r[:, 1:], axis=1)) / det
        out[:, 1:] = (r[:, 1:] - out[:, :1] * lam[:, 1:]) / lam[:, :1]
        return out

    def max_step(self, x, dx):
        a = self.jdet(dx)
        b = x[:, 0] * dx[:, 0] - np.sum(x[:, 1:] * dx[:, 1:], axis=1)
        c = self.jdet(x)
        return float(np.min(_smallest_positive_root(a, b, c)))

    def interior(self, x):
        return bool(np.all(x[:, 0] > np.linalg.norm(x[:, 1:], axis=1)))

    def scaling(self, x, s):
        return _SocScaling(x, s, self.J)


class _SocScaling:
    def __init__(self, x, s, J):
        dx = SocGroup.jdet(x)
        ds = SocGroup.jdet(s)
        if np.any(dx <= 0) or np.any(ds <= 0) or np.any(x[:, 0] <= 0) or np.any(s[:, 0] <= 0):
            raise NumericalError("second-order iterate left the interior")
        nx = np.sqrt(dx)[:, None]
        ns = np.sqrt(ds)[:, None]
        xb = x / nx
        sb = s / ns
        gamma = np.sqrt((1.0 + np.sum(xb * sb, axis=1)) / 2.0)[:, None]
        wbar = (xb + sb @ J) / (2.0 * gamma)
        v = wbar.copy()
        v[:, 0] += 1.0
        v /= np.sqrt(2.0 * (wbar[:, :1] + 1.0))
        eta = np.sqrt(nx / ns)[:, :, None]
        vv = np.einsum("bi,bj->bij", v, v)
        Jv = v @ J
        JvvJ = np.einsum("bi,bj->bij", Jv, Jv)
        self.W = eta * (2.0 * vv - J)
        self.Winv = (2.0 * JvvJ - J) / eta
        self.lam = np.einsum("bij,bj->bi", self.W, s)

    def to_dual_scaled(self, v):
        return np.einsum("bij,bj->bi", self.W, v)

    def to_primal_scaled(self, v):
        return np.einsum("bij,bj->bi", self.Winv, v)

    from_primal_scaled = to_dual_scaled
    from_dual_scaled = to_primal_scaled

    def dinv_blocks(self):
        return self.Winv @ self.Winv


class PsdGroup:
    kind = "psd"

    def __init__(self, idx: np.ndarray, q: int):
        self.idx = np.asarray(idx, dtype=int)
        self.q = q
        self.degree = q * self.idx.shape[0]
        iu, ju = np.triu_indices(q)
        self._diag = iu == ju
        self._iu, self._ju = iu, ju
        # svec <-> vec maps used to build symmetric Kronecker products
        t = svec_len(q)
        P = np.zeros((t, q * q))
        Q = np.zeros((q * q, t))
        for k, (i, j) in enumerate(zip(iu, ju)):
            if i == j:
                P[k, i * q + i] = 1.0
                Q[i * q + i, k] = 1.0
            else:
                P[k, i * q + j] = P[k, j * q + i] = 1.0 / np.sqrt(2.0)
                Q[i * q + j, k] = Q[j * q + i, k] = 1.0 / np.sqrt(2.0)
        self._P, self._Q = P, Q

    def identity(self):
        return np.tile(svec(np.eye(self.q)), (self.idx.shape[0], 1))

    def jprod(self, u, v):
        U, V = smat(u), smat(v)
        UV = U @ V
        return svec(0.5 * (UV + np.swapaxes(UV, -1, -2)))

    def jdiv(self, lam, r):
        # lam is diagonal at the scaled point
        d = lam[:, self._diag]
        denom = 0.5 * (d[:, self._iu] + d[:, self._ju])
        return r / denom

    def _chol(self, v):
        try:
            return np.linalg.cholesky(smat(v))
        except np.linalg.LinAlgError as exc:
            raise NumericalError("PSD iterate left the interior") from exc

    def max_step(self, x, dx):
        L = self._chol(x)
        Y = np.linalg.solve(L, smat(dx))
        Y = np.linalg.solve(L, np.swapaxes(Y, -1, -2))
        ev = np.linalg.eigvalsh(0.5 * (Y + np.swapaxes(Y, -1, -2)))[:, 0]
        with np.errstate(divide="ignore"):
            steps = np.where(ev < 0, -1.0 / ev, np.inf)
        return float(np.min(steps))

    def interior(self, x):
        try:
            np.linalg.cholesky(smat(x))
        except np.linalg.LinAlgError:
            return False
        return True

    def scaling(self, x, s):
        return _PsdScaling(self, x, s)


class _PsdScaling:
    def __init__(self, grp: PsdGroup, x, s):
        L = grp._chol(x)
        Ls = grp._chol(s)
        U, lam, Vt = np.linalg.svd(np.swapaxes(Ls, -1, -2) @ L)
        if np.any(lam <= 0):
            raise NumericalError("degenerate PSD scaling")
        V = np.swapaxes(Vt, -1, -2)
        R = L @ V / np.sqrt(lam)[:, None, :]
        self.R = R
        self.Rinv = np.linalg.inv(R)
        self.grp = grp
        diag = np.zeros(x.shape)
        diag[:, grp._diag] = lam
        self.lam = diag

    def _congr(self, M, v):
        # svec(M smat(v) M^T)
        return svec(M @ smat(v) @ np.swapaxes(M, -1, -2))

    def to_dual_scaled(self, v):
        return self._congr(np.swapaxes(self.R, -1, -2), v)

    def to_primal_scaled(self, v):
        return self._congr(self.Rinv, v)

    def from_primal_scaled(self, v):
        return self._congr(self.R, v)

    def from_dual_scaled(self, v):
        return self._congr(np.swapaxes(self.Rinv, -1, -2), v)

    def dinv_blocks(self):
        G = np.swapaxes(self.Rinv, -1, -2) @ self.Rinv
        B, q, _ = G.shape
        K = np.einsum("bij,bkl->bikjl", G, G).reshape(B, q * q, q * q)
        out = self.grp._P @ K @ self.grp._Q
        return 0.5 * (out + np.swapaxes(out, -1, -2))
