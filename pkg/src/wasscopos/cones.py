"""Inner approximation of the copositive cone over ``Xi_hat x R^n_+``.

A symmetric matrix ``G`` of order ``k + n`` is certified copositive on
``Xi_hat x R^n_+`` by writing ``G = S + M`` with ``M`` PSD, ``S22 >= 0``
entrywise, rows of ``S21`` in the dual cone of ``Xi_hat``, and ``S11``
copositive over ``Xi_hat``:

* polyhedral ``Xi_hat = {P xi >= 0}``: ``S11 = P'YP`` with ``Y >= 0`` and
  ``S21 = W P`` with ``W >= 0``;
* second-order cone: ``S11 = tau J`` with ``tau >= 0`` (the PSD part of the
  exact description is absorbed into ``M``) and each row of ``S21`` in the
  cone itself.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .model import SupportCone
from .solver import ConicBuilder, smat, svec, svec_len

SQRT2 = np.sqrt(2.0)


@dataclasses.dataclass
class SymAffine:
    """``const + sum_v x[v] * coef[v]`` over symmetric matrices."""

    const: np.ndarray
    terms: list[tuple[int, np.ndarray]] = dataclasses.field(default_factory=list)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        out = self.const.copy()
        for v, C in self.terms:
            out = out + x[v] * C
        return out


@dataclasses.dataclass
class IADecomposition:
    M: np.ndarray
    S11: np.ndarray
    S21: np.ndarray
    S22: np.ndarray
    support: SupportCone
    Y: np.ndarray | None = None
    W: np.ndarray | None = None
    tau: float | None = None
    M11: np.ndarray | None = None

    @property
    def S(self) -> np.ndarray:
        return np.block([[self.S11, self.S21.T], [self.S21, self.S22]])

    def matrix(self) -> np.ndarray:
        return self.S + self.M

    def certificate_violation(self) -> float:
        """Largest violation of the certificate cone memberships (0 if all hold)."""
        viol = [max(0.0, -np.linalg.eigvalsh(self.M).min()), max(0.0, -self.S22.min(initial=0.0))]
        if self.support.kind == "soc":
            viol.append(max(0.0, -self.tau))
            for row in self.S21:
                viol.append(max(0.0, np.linalg.norm(row[1:]) - row[0]))
        else:
            viol.append(max(0.0, -self.Y.min(initial=0.0)))
            viol.append(max(0.0, -self.W.min(initial=0.0)))
        return float(max(viol))


@dataclasses.dataclass
class IAMembership:
    """Variable indices of the certificate added for one constraint."""

    support: SupportCone
    k: int
    n: int
    M: np.ndarray
    S22: np.ndarray
    Y: np.ndarray | None = None
    W: np.ndarray | None = None
    tau: np.ndarray | None = None
    S21: np.ndarray | None = None  # (n, k) indices of SOC rows
    rows: np.ndarray | None = None
    basis: np.ndarray | None = None

    def decomposition(self, x: np.ndarray, target: np.ndarray | None = None) -> IADecomposition:
        """Certificate at ``x``.

        On a reduced face only ``V'MV`` is a variable, so ``M`` is recovered
        as ``target - S`` and ``target`` must be given.
        """
        k, n = self.k, self.n
        M = smat(x[self.M]) if self.basis is None else None
        S22 = _sym_from_upper(x[self.S22], n)
        if self.support.kind == "soc":
            S21 = x[self.S21].reshape(n, k)
            tau = float(x[self.tau][0])
            J = np.diag([1.0] + [-1.0] * (k - 1))
            dec = IADecomposition(M, tau * J, S21, S22, self.support, tau=tau, M11=np.zeros((k, k)))
        else:
            P = self.support.matrix
            p = P.shape[0]
            Y = _sym_from_upper(x[self.Y], p)
            W = x[self.W].reshape(n, p)
            dec = IADecomposition(M, P.T @ Y @ P, W @ P, S22, self.support, Y=Y, W=W)
        if dec.M is None:
            if target is None:
                raise ValueError("target matrix needed to recover M on a reduced face")
            dec.M = target - dec.S
        return dec


def _sym_from_upper(vals: np.ndarray, q: int) -> np.ndarray:
    out = np.zeros((q, q))
    iu, ju = np.triu_indices(q)
    out[iu, ju] = vals
    out[ju, iu] = vals
    return out


def _unit(d: int, a: int, b: int) -> np.ndarray:
    """E_ab + E_ba (or E_aa)."""
    E = np.zeros((d, d))
    E[a, b] = E[b, a] = 1.0
    return E


def emit_membership(
    builder: ConicBuilder,
    target: SymAffine,
    support: SupportCone,
    basis: np.ndarray | None = None,
) -> IAMembership:
    """Constrain ``target`` to lie in IA(Xi_hat x R^n_+).

    Adds one PSD block of order ``k + n``, the certificate variables, and
    ``(k+n)(k+n+1)/2`` equalities ``svec(M + S - target_terms) = svec(const)``.

    With ``basis`` (columns ``V`` spanning the face) only ``V'MV`` is required to be
    PSD: the block has order ``V.shape[1]`` and the equalities are projected.
    """
    d = target.const.shape[0]
    k = support.k
    n = d - k
    if n < 0:
        raise ValueError("target is smaller than the support dimension")
    if basis is None:
        V = None
        order = d

        def proj(C):
            return svec(C)
    else:
        V = np.asarray(basis, dtype=float)
        order = V.shape[1]

        def proj(C):
            return svec(V.T @ C @ V)

    t = svec_len(order)
    M = builder.add_block("psd", order)
    S22 = builder.add_variables("nonneg", svec_len(n)) if n else np.zeros(0, dtype=int)
    coeffs: list[tuple[int, np.ndarray]] = []
    for var, C in target.terms:
        coeffs.append((int(var), -proj(C)))
    iu, ju = np.triu_indices(n)
    for var, a, b in zip(S22, iu, ju):
        coeffs.append((int(var), proj(_unit(d, k + a, k + b))))

    handle = IAMembership(support, k, n, M, S22, basis=V)
    if support.kind == "soc":
        tau = builder.add_variables("nonneg", 1)
        J = np.zeros((d, d))
        J[:k, :k] = np.diag([1.0] + [-1.0] * (k - 1))
        coeffs.append((int(tau[0]), proj(J)))
        rows21 = []
        for j in range(n):
            blk = builder.add_block("soc", k)
            rows21.append(blk)
            for l, var in enumerate(blk):
                coeffs.append((int(var), proj(_unit(d, k + j, l))))
        handle.tau = tau
        handle.S21 = np.array(rows21, dtype=int).reshape(n, k)
    elif support.kind in ("nonneg_orthant", "polyhedral"):
        P = support.matrix
        p = P.shape[0]
        Y = builder.add_variables("nonneg", svec_len(p))
        W = builder.add_variables("nonneg", n * p) if n else np.zeros(0, dtype=int)
        ya, yb = np.triu_indices(p)
        orthant = support.kind == "nonneg_orthant"
        for var, a, b in zip(Y, ya, yb):
            if orthant:
                col = proj(_unit(d, a, b))
            else:
                C = np.zeros((d, d))
                C[:k, :k] = np.outer(P[a], P[b])
                if a != b:
                    C[:k, :k] += np.outer(P[b], P[a])
                col = proj(C)
            coeffs.append((int(var), col))
        for idx, var in enumerate(W):
            j, l = divmod(idx, p)
            if orthant:
                col = proj(_unit(d, k + j, l))
            else:
                C = np.zeros((d, d))
                C[k + j, :k] = P[l]
                C[:k, k + j] = P[l]
                col = proj(C)
            coeffs.append((int(var), col))
        handle.Y = Y
        handle.W = W
    else:
        raise ValueError(f"unsupported cone variant {support.kind!r}")
    rows = builder.add_rows(coeffs, proj(target.const))
    builder.add_identity_rows(rows, M)
    handle.rows = rows
    assert len(rows) == t
    return handle


@dataclasses.dataclass
class SpotCheck:
    passed: bool
    worst: float  # min over samples of z'Gz / ||z||^2
    threshold: float
    trials: int


def copositivity_spot_check(
    G: np.ndarray,
    support: SupportCone,
    trials: int = 10_000,
    tol: float = 1e-6,
    seed: int | np.random.Generator | None = 0,
) -> SpotCheck:
    """Probabilistic copositivity test of ``G`` over ``Xi_hat x R^n_+``.

    Passes when every sampled ``z`` has ``z'Gz >= -tol (1 + ||G||) ||z||^2``.
    A pass is evidence, not proof.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    G = np.asarray(G, dtype=float)
    G = 0.5 * (G + G.T)
    d = G.shape[0]
    k = support.k
    n = d - k
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    xi = support.sample(trials, rng)
    x = np.abs(rng.standard_normal((trials, n)))
    mask = rng.random((trials, n)) < 0.4
    x[mask] = 0.0
    # scale mix so neither part dominates
    x *= rng.exponential(size=(trials, 1))
    Z = np.hstack([xi, x])
    # deterministic corners: x-part unit vectors, pure xi samples
    extra = [np.concatenate([np.zeros(k), f]) for f in np.eye(n)]
    if support.kind == "nonneg_orthant":
        extra += [np.concatenate([e, np.zeros(n)]) for e in np.eye(k)]
    if extra:
        Z = np.vstack([Z, np.array(extra)])
    norms = np.sum(Z * Z, axis=1)
    Z = Z[norms > 0]
    norms = norms[norms > 0]
    vals = np.einsum("si,ij,sj->s", Z, G, Z) / norms
    worst = float(vals.min())
    threshold = -tol * (1.0 + np.linalg.norm(G, 2))
    return SpotCheck(bool(worst >= threshold), worst, threshold, int(Z.shape[0]))
