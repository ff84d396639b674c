"""Case studies: instance and distribution generators, Monte Carlo estimates
of the true expected optimal value, and calibrated trial runs."""

from __future__ import annotations

import csv
import dataclasses
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from scipy.stats import random_correlation as _scipy_randcorr

from .bound import BoundError, saa_value, solve_bound
from .calibrate import DEFAULT_GRID, DEFAULT_K, CalibrationCurve, calibration_curve, select_radius
from .model import Dataset, DeterministicOracle, MixedBinaryProgram, SupportCone, enforce_binary_bounds

log = logging.getLogger(__name__)

CASES = ("ssa", "project", "knapsack")
MIN_ACCEPTANCE = 1e-4


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def random_correlation(d: int, seed=0) -> np.ndarray:
    """Random correlation matrix with eigenvalues drawn uniformly on the
    simplex (scaled to sum ``d``), made unit-diagonal by Givens rotations."""
    if d < 1:
        raise ValueError("dimension must be positive")
    if d == 1:
        return np.ones((1, 1))
    rng = _rng(seed)
    eigs = rng.dirichlet(np.ones(d)) * d
    eigs *= d / eigs.sum()
    C = _scipy_randcorr.rvs(eigs, random_state=rng, tol=1e-12)
    C = 0.5 * (C + C.T)
    np.fill_diagonal(C, 1.0)
    return C


def moments_to_lognormal(mu, Sigma) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of ``exp(Z)`` for ``Z ~ N(mu, Sigma)``."""
    mu = np.asarray(mu, dtype=float).ravel()
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    d = np.diag(Sigma)
    mu_log = np.exp(mu + 0.5 * d)
    Sigma_log = np.exp(mu[:, None] + mu[None, :] + 0.5 * (d[:, None] + d[None, :])) * np.expm1(Sigma)
    return mu_log, Sigma_log


@dataclasses.dataclass
class LognormalSpec:
    """``zeta = exp(Z)``, ``Z ~ N(mu, Sigma)``; ``Sigma`` is the covariance."""

    mu: np.ndarray
    Sigma: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float).ravel()
        self.Sigma = np.atleast_2d(np.asarray(self.Sigma, dtype=float))
        if self.Sigma.shape != (self.mu.size,) * 2:
            raise ValueError("Sigma shape does not match mu")
        if np.linalg.eigvalsh(0.5 * (self.Sigma + self.Sigma.T)).min() < -1e-10:
            raise ValueError("Sigma must be positive semidefinite")

    @classmethod
    def from_second_moment(cls, mu, second) -> "LognormalSpec":
        mu = np.asarray(mu, dtype=float).ravel()
        return cls(mu, np.asarray(second, dtype=float) - np.outer(mu, mu))

    @property
    def dim(self) -> int:
        return self.mu.size

    @property
    def moments(self) -> tuple[np.ndarray, np.ndarray]:
        return moments_to_lognormal(self.mu, self.Sigma)

    def draw(self, count: int, rng: np.random.Generator) -> np.ndarray:
        L = np.linalg.cholesky(self.Sigma + 1e-14 * np.eye(self.dim))
        return np.exp(self.mu + rng.standard_normal((count, self.dim)) @ L.T)

    def to_json(self) -> dict:
        return {"type": "lognormal", "mu": self.mu.tolist(), "Sigma": self.Sigma.tolist()}


@dataclasses.dataclass
class TruncatedNormalSpec:
    """``N(mu, Sigma)`` conditioned on ``zeta >= 0`` (rejection sampling)."""

    mu: np.ndarray
    Sigma: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float).ravel()
        self.Sigma = np.atleast_2d(np.asarray(self.Sigma, dtype=float))
        if self.Sigma.shape != (self.mu.size,) * 2:
            raise ValueError("Sigma shape does not match mu")

    @classmethod
    def from_second_moment(cls, mu, second) -> "TruncatedNormalSpec":
        mu = np.asarray(mu, dtype=float).ravel()
        return cls(mu, np.asarray(second, dtype=float) - np.outer(mu, mu))

    @property
    def dim(self) -> int:
        return self.mu.size

    def draw(self, count: int, rng: np.random.Generator) -> np.ndarray:
        L = np.linalg.cholesky(self.Sigma + 1e-14 * np.eye(self.dim))
        out = np.empty((0, self.dim))
        tried = 0
        while out.shape[0] < count:
            batch = max(2 * (count - out.shape[0]), 1024)
            z = self.mu + rng.standard_normal((batch, self.dim)) @ L.T
            tried += batch
            out = np.vstack([out, z[np.all(z >= 0, axis=1)]])
            rate = out.shape[0] / tried
            if tried >= 100_000 and rate < MIN_ACCEPTANCE:
                raise ValueError(
                    f"rejection acceptance {rate:.2e} is below {MIN_ACCEPTANCE:g}; "
                    "raise the mean or shrink the covariance"
                )
        return out[:count]

    def to_json(self) -> dict:
        return {"type": "truncated_normal", "mu": self.mu.tolist(), "Sigma": self.Sigma.tolist()}


def spec_from_json(data: dict):
    kind = data.get("type")
    if kind == "lognormal":
        return LognormalSpec(data["mu"], data["Sigma"])
    if kind == "truncated_normal":
        return TruncatedNormalSpec(data["mu"], data["Sigma"])
    raise ValueError(f"unknown distribution type {kind!r}")


def sample(spec, N: int, seed=0) -> Dataset:
    """``N`` draws of ``zeta`` with the leading 1 prepended."""
    if N < 1:
        raise ValueError("N must be positive")
    return Dataset.from_raw(spec.draw(N, _rng(seed)))


@dataclasses.dataclass(frozen=True)
class ProjectNetwork:
    """Six-node activity-on-arc network with three source-sink paths."""

    nodes: tuple[int, ...] = (1, 2, 3, 4, 5, 6)
    arcs: tuple[tuple[int, int], ...] = ((1, 2), (1, 3), (2, 4), (3, 4), (3, 5), (4, 6), (5, 6))
    source: int = 1
    sink: int = 6

    def incidence(self) -> np.ndarray:
        """Node-arc matrix: +1 on the tail, -1 on the head."""
        M = np.zeros((len(self.nodes), len(self.arcs)))
        pos = {v: i for i, v in enumerate(self.nodes)}
        for a, (u, v) in enumerate(self.arcs):
            M[pos[u], a] = 1.0
            M[pos[v], a] = -1.0
        return M

    def paths(self) -> list[tuple[int, ...]]:
        """Source-sink paths as tuples of arc indices."""
        out = []

        def walk(node, used):
            if node == self.sink:
                out.append(tuple(used))
                return
            for a, (u, v) in enumerate(self.arcs):
                if u == node:
                    walk(v, used + [a])

        walk(self.source, [])
        return out


@dataclasses.dataclass
class Case:
    name: str
    program: MixedBinaryProgram
    distribution: LognormalSpec | TruncatedNormalSpec


def _objective_map(n_items: int, n_cols: int) -> np.ndarray:
    """``F`` with ``(F xi)_j = zeta_j`` for the first ``n_items`` columns."""
    F = np.zeros((n_cols, n_items + 1))
    F[:n_items, 1:] = np.eye(n_items)
    return F


def build_case(name: str, seed: int = 0) -> Case:
    """One of the three case studies with a randomly drawn true distribution."""
    rng = np.random.default_rng(seed)
    if name == "ssa":
        n = 3
        prog = MixedBinaryProgram(
            np.ones((1, n)), np.ones(1), _objective_map(n, n), (), SupportCone("nonneg_orthant", n + 1)
        )
        mu = rng.uniform(0.0, 2.0, n)
        sigma = np.full(n, 0.25)
        dist = LognormalSpec(mu, np.outer(sigma, sigma) * random_correlation(n, rng))
    elif name == "knapsack":
        w = np.array([5.0, 4.0, 6.0, 3.0])
        n = w.size
        A = np.hstack([w, [1.0]])[None, :]  # slack column
        prog = MixedBinaryProgram(
            A, [10.0], _objective_map(n, n + 1), tuple(range(n)), SupportCone("nonneg_orthant", n + 1)
        )
        prog = enforce_binary_bounds(prog)
        mu = rng.uniform(0.0, 2.0, n)
        sigma = np.full(n, 0.25)
        dist = LognormalSpec(mu, np.outer(sigma, sigma) * random_correlation(n, rng))
    elif name == "project":
        net = ProjectNetwork()
        inc = net.incidence()
        rhs = np.zeros(len(net.nodes))
        rhs[net.nodes.index(net.source)] = 1.0
        rhs[net.nodes.index(net.sink)] = -1.0
        keep = [i for i, v in enumerate(net.nodes) if v != net.sink]  # balance rows sum to zero
        n = len(net.arcs)
        prog = MixedBinaryProgram(
            inc[keep], rhs[keep], _objective_map(n, n), (), SupportCone("nonneg_orthant", n + 1),
            bounds_implied=True,
        )
        mu = rng.uniform(0.0, 5.0, n)
        dist = TruncatedNormalSpec(mu, random_correlation(n, rng))
    else:
        raise ValueError(f"unknown case {name!r}; expected one of {', '.join(CASES)}")
    return Case(name, prog, dist)


@dataclasses.dataclass
class Simulation:
    value: float
    stderr: float
    samples: int


def simulate(prog: MixedBinaryProgram, spec, samples: int = 100_000, seed=0, chunk: int = 20_000) -> Simulation:
    """Monte Carlo estimate of the expected optimal value."""
    if samples < 1:
        raise ValueError("samples must be positive")
    rng = _rng(seed)
    oracle = DeterministicOracle(prog)
    vals = []
    for start in range(0, samples, chunk):
        count = min(chunk, samples - start)
        vals.append(oracle.values(sample(spec, count, rng).samples))
    v = np.concatenate(vals)
    se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else float("nan")
    return Simulation(float(v.mean()), se, int(v.size))


TRIAL_FIELDS = ["case", "N", "trial", "epsilon", "v_wb", "v_sb", "gap", "covered", "runtime_ms"]
AGG_FIELDS = [
    "case", "N", "epsilon", "trials", "failed", "v_sb", "mean_v_wb", "median_v_wb",
    "mean_gap", "gap_q20", "gap_q50", "gap_q80", "coverage",
]
CURVE_FIELDS = ["case", "N", "epsilon", "confidence", "K", "N_T", "seed"]


def relative_gap(v_wb: float, v_sb: float) -> float:
    return (v_wb - v_sb) / v_sb


def _trial_job(args):
    case_name, prog, spec, N, trial, eps, seed_seq, v_sb, solver_opts = args
    data = sample(spec, N, np.random.default_rng(seed_seq))
    # in-sample value, kept in memory only (not a CSV column)
    row = {"case": case_name, "N": N, "trial": trial, "epsilon": eps, "v_sb": v_sb, "v_saa": saa_value(prog, data)}
    t0 = time.perf_counter()
    try:
        res = solve_bound(prog, data, eps, spot_check=False, **solver_opts)
        if not res.usable:
            raise BoundError(f"bound status {res.status.value}")
        v = res.value
        row.update(v_wb=v, gap=relative_gap(v, v_sb), covered=int(v >= v_sb), error="")
    except (BoundError, ValueError) as exc:
        log.warning("trial %d at N=%d failed: %s", trial, N, exc)
        row.update(v_wb=float("nan"), gap=float("nan"), covered=0, error=str(exc))
    row["runtime_ms"] = (time.perf_counter() - t0) * 1e3
    return row


@dataclasses.dataclass
class ExperimentResult:
    case: str
    trials: list[dict]
    aggregates: list[dict]
    curves: dict[int, CalibrationCurve]
    simulation: Simulation
    radii: dict[int, float]

    def write(self, out_dir) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"trials": out / "trials.csv", "aggregates": out / "aggregates.csv", "curve": out / "curve.csv"}
        _write_csv(paths["trials"], TRIAL_FIELDS, self.trials)
        _write_csv(paths["aggregates"], AGG_FIELDS, self.aggregates)
        rows = []
        for N, curve in sorted(self.curves.items()):
            rows += [{"case": self.case, "N": N, **r} for r in curve.rows()]
        _write_csv(paths["curve"], CURVE_FIELDS, rows)
        return paths


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _write_csv(path: Path, fields, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k)) for k in fields})


def aggregate(case: str, N: int, eps: float, v_sb: float, rows: list[dict]) -> dict:
    ok = [r for r in rows if not r.get("error")]
    gaps = np.array([r["gap"] for r in ok])
    vals = np.array([r["v_wb"] for r in ok])
    agg = {"case": case, "N": N, "epsilon": eps, "trials": len(ok), "failed": len(rows) - len(ok), "v_sb": v_sb}
    if ok:
        q20, q50, q80 = np.quantile(gaps, [0.2, 0.5, 0.8])
        agg.update(
            mean_v_wb=float(vals.mean()), median_v_wb=float(np.median(vals)), mean_gap=float(gaps.mean()),
            gap_q20=float(q20), gap_q50=float(q50), gap_q80=float(q80),
            coverage=float(np.mean([r["covered"] for r in ok])),
        )
    else:
        agg.update({k: float("nan") for k in AGG_FIELDS if k not in agg})
    return agg


def run_trials(
    case: str | Case,
    N_list,
    trials: int = 100,
    beta: float = 0.1,
    seed: int = 0,
    *,
    K: int = DEFAULT_K,
    grid=DEFAULT_GRID,
    N_T: int | None = None,
    sim_samples: int = 100_000,
    curves: dict[int, CalibrationCurve] | None = None,
    calibration_mode: str = "bisect",
    jobs: int = 1,
    solver_opts: dict | None = None,
    instance_seed: int | None = None,
) -> ExperimentResult:
    """Calibrate a radius per sample size, then solve fresh trials at it.

    For each ``N`` one calibration dataset is drawn and its curve gives the
    radius at confidence ``1 - beta``; every trial then draws a fresh dataset
    of size ``N`` and is compared with the simulated expected value.
    """
    case = build_case(case, seed if instance_seed is None else instance_seed) if isinstance(case, str) else case
    N_list = [int(N) for N in N_list]
    if trials < 1 or not N_list or min(N_list) < 2:
        raise ValueError("need trials >= 1 and sample sizes N >= 2")
    opts = solver_opts or {}
    root = np.random.SeedSequence(seed)
    sim_seq, *per_N = root.spawn(1 + len(N_list))
    sim = simulate(case.program, case.distribution, sim_samples, np.random.default_rng(sim_seq))
    log.info("%s: simulated value %.6f (se %.2e, %d samples)", case.name, sim.value, sim.stderr, sim.samples)

    curves = dict(curves or {})
    radii = {}
    rows_all, aggs = [], []
    for N, seq in zip(N_list, per_N):
        cal_seq, trial_root = seq.spawn(2)
        if N not in curves:
            cal_data = sample(case.distribution, N, np.random.default_rng(cal_seq))
            cal_seed = int(cal_seq.generate_state(1)[0])
            curves[N] = calibration_curve(
                case.program, cal_data, grid, K, N_T, cal_seed,
                mode=calibration_mode, jobs=jobs, solver_opts=opts,
            )
        eps = select_radius(curves[N], beta)
        radii[N] = eps
        log.info("%s: N=%d radius %.4g", case.name, N, eps)
        args = [
            (case.name, case.program, case.distribution, N, t, eps, s, sim.value, opts)
            for t, s in zip(range(trials), trial_root.spawn(trials))
        ]
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                rows = list(pool.map(_trial_job, args))
        else:
            rows = [_trial_job(a) for a in args]
        rows_all += rows
        aggs.append(aggregate(case.name, N, eps, sim.value, rows))
    return ExperimentResult(case.name, rows_all, aggs, curves, sim, radii)
