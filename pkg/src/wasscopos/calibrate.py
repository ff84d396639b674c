"""Empirical confidence levels of candidate radii by repeated train/validation
splits, and radius selection from the resulting curve."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from scipy.optimize import isotonic_regression

from .bound import BoundError, saa_value, solve_bound
from .model import Dataset, DeterministicOracle, MixedBinaryProgram
from .solver import Status

log = logging.getLogger(__name__)

DEFAULT_GRID = (
    0.001, 0.005, 0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 2.0,
)
DEFAULT_K = 100


class CalibrationError(ValueError):
    pass


def default_train_size(N: int) -> int:
    return max(1, math.ceil(N / 2)) if N > 1 else 1


def split(dataset: Dataset, K: int, N_T: int, seed: int = 0) -> list[tuple[Dataset, Dataset]]:
    """``K`` random (train, validation) partitions with ``|train| = N_T``."""
    N = dataset.N
    if not 1 <= N_T < N:
        raise CalibrationError(f"training size must satisfy 1 <= N_T < N={N}, got {N_T}")
    if K < 1:
        raise CalibrationError("K must be positive")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(K):
        perm = rng.permutation(N)
        train = np.sort(perm[:N_T])
        val = np.sort(perm[N_T:])
        out.append((dataset.subset(train), dataset.subset(val)))
    return out


def _covers(prog, train, target, eps, solver_opts) -> tuple[bool, float]:
    """Whether the bound trained at ``eps`` covers ``target``; failures do not cover."""
    try:
        res = solve_bound(prog, train, eps, spot_check=False, **solver_opts)
    except BoundError as exc:
        log.warning("bound failed at eps=%g: %s", eps, exc)
        return False, np.nan
    if res.status == Status.OPTIMAL:
        return res.value >= target, res.value
    # a stalled solve still decides coverage when its bracket excludes the target
    br = res.bracket()
    if br is not None and (br[0] >= target or br[1] < target):
        return br[0] >= target, res.value
    log.warning(
        "bound not optimal at eps=%g (%s, gap %.1e); counted as not covering",
        eps, res.status.value, res.gap,
    )
    return False, res.value


def _split_job(args):
    """Bound values and coverage indicators of one split over the grid."""
    prog, train, val, grid, mode, solver_opts = args
    target = saa_value(prog, val)
    G = len(grid)
    values = np.full(G, np.nan)
    covered = np.zeros(G, dtype=bool)
    if mode == "full":
        for j, eps in enumerate(grid):
            covered[j], values[j] = _covers(prog, train, target, eps, solver_opts)
        return target, values, covered
    # coverage is monotone in eps, so only the threshold index is needed
    lo, hi = 0, G  # first covering index lies in [lo, hi]
    while lo < hi:
        mid = (lo + hi) // 2
        cov, values[mid] = _covers(prog, train, target, grid[mid], solver_opts)
        if cov:
            hi = mid
        else:
            lo = mid + 1
    covered[lo:] = True
    return target, values, covered


@dataclasses.dataclass
class CalibrationCurve:
    grid: np.ndarray
    raw: np.ndarray  # fraction of splits covered, per grid point
    confidence: np.ndarray  # isotonic (nondecreasing) version of ``raw``
    K: int
    N_T: int
    seed: int
    mode: str = "bisect"
    values: np.ndarray | None = dataclasses.field(default=None, repr=False)  # (K, |grid|)
    targets: np.ndarray | None = dataclasses.field(default=None, repr=False)  # (K,)

    def rows(self) -> list[dict]:
        return [
            {"epsilon": float(e), "confidence": float(c), "K": self.K, "N_T": self.N_T, "seed": self.seed}
            for e, c in zip(self.grid, self.confidence)
        ]

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["epsilon", "confidence", "K", "N_T", "seed"])
            w.writeheader()
            for row in self.rows():
                w.writerow({**row, "epsilon": repr(row["epsilon"]), "confidence": repr(row["confidence"])})

    @classmethod
    def from_csv(cls, path) -> "CalibrationCurve":
        with Path(path).open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise CalibrationError(f"empty calibration curve in {path}")
        grid = np.array([float(r["epsilon"]) for r in rows])
        conf = np.array([float(r["confidence"]) for r in rows])
        return cls(grid, conf.copy(), conf, int(rows[0]["K"]), int(rows[0]["N_T"]), int(rows[0]["seed"]))


def monotone_confidence(raw: np.ndarray) -> np.ndarray:
    """Least-squares nondecreasing fit, clipped to [0, 1]."""
    raw = np.asarray(raw, dtype=float)
    if raw.size <= 1:
        return raw.copy()
    return np.clip(isotonic_regression(raw, increasing=True).x, 0.0, 1.0)


def calibration_curve(
    prog: MixedBinaryProgram,
    dataset: Dataset,
    grid=DEFAULT_GRID,
    K: int = DEFAULT_K,
    N_T: int | None = None,
    seed: int = 0,
    *,
    mode: str = "bisect",
    jobs: int = 1,
    solver_opts: dict | None = None,
) -> CalibrationCurve:
    """Empirical confidence of every radius in ``grid`` over shared splits.

    ``mode="full"`` solves every (split, radius) pair; ``"bisect"`` uses the
    monotonicity of the bound in the radius to find each split's covering
    threshold with about ``log2 |grid|`` solves.
    """
    grid = np.asarray(sorted(float(e) for e in grid))
    if grid.size == 0:
        raise CalibrationError("radius grid is empty")
    if np.any(grid < 0):
        raise CalibrationError("radii must be nonnegative")
    if mode not in ("full", "bisect"):
        raise CalibrationError(f"unknown calibration mode {mode!r}")
    N_T = default_train_size(dataset.N) if N_T is None else int(N_T)
    pairs = split(dataset, K, N_T, seed)
    opts = solver_opts or {}
    jobs_args = [(prog, tr, va, tuple(grid), mode, opts) for tr, va in pairs]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_split_job, jobs_args))
    else:
        results = [_split_job(a) for a in jobs_args]
    targets = np.array([r[0] for r in results])
    values = np.vstack([r[1] for r in results])
    covered = np.vstack([r[2] for r in results])
    raw = covered.mean(axis=0)
    if np.any(np.diff(raw) < -1e-12):
        log.warning("raw confidence not monotone in the radius; isotonic fit applied")
    return CalibrationCurve(grid, raw, monotone_confidence(raw), K, N_T, seed, mode, values, targets)


def empirical_confidence(
    prog: MixedBinaryProgram,
    dataset: Dataset,
    epsilon: float,
    K: int = DEFAULT_K,
    N_T: int | None = None,
    seed: int = 0,
    **solver_opts,
) -> float:
    """Fraction of splits whose trained bound at ``epsilon`` covers the validation SAA."""
    N_T = default_train_size(dataset.N) if N_T is None else int(N_T)
    oracle = DeterministicOracle(prog)
    hits = 0
    for train, val in split(dataset, K, N_T, seed):
        target = saa_value(prog, val, oracle)
        hits += _covers(prog, train, target, epsilon, solver_opts)[0]
    return hits / K


def select_radius(curve: CalibrationCurve, beta: float) -> float:
    """Smallest radius whose confidence reaches ``1 - beta``."""
    if not 0 <= beta < 1:
        raise CalibrationError("beta must lie in [0, 1)")
    if len(curve.grid) == 0:
        raise CalibrationError("calibration curve is empty")
    ok = np.nonzero(curve.confidence >= 1.0 - beta - 1e-12)[0]
    if ok.size == 0:
        raise CalibrationError(
            f"no radius reaches confidence {1 - beta:.3f} (max {curve.confidence.max():.3f}); "
            "extend the grid with larger radii"
        )
    return float(curve.grid[ok[0]])
