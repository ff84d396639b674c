"""Command-line front end.

Exit codes: 0 ok, 2 I/O error, 3 invalid configuration, 4 solver did not
reach optimality.  ``WASSCOPOS_LOG`` sets the log level (default WARNING).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bound import BoundError, solve_bound
from .calibrate import DEFAULT_GRID, DEFAULT_K, CalibrationError, calibration_curve, select_radius
from .experiments import CASES, build_case, run_trials, simulate, spec_from_json
from .model import Dataset, DimensionError, InfeasibleError, MixedBinaryProgram, UnboundedError, enforce_binary_bounds

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3, 4
MANIFEST_FORMAT = "wasscopos-manifest-1"

log = logging.getLogger("wasscopos")


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _solver_args(p):
    g = p.add_argument_group("solver")
    g.add_argument("--feas-tol", type=float, default=1e-7)
    g.add_argument("--gap-tol", type=float, default=1e-7)
    g.add_argument("--max-iter", type=int, default=200)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="wasscopos", description="Wasserstein-ball copositive upper bounds.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--manifest", type=Path, help="where to write the run manifest")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    b = sub.add_parser("bound", help="solve the bound for one radius")
    b.add_argument("instance", type=Path)
    b.add_argument("dataset", type=Path)
    b.add_argument("--epsilon", type=float, required=True)
    b.add_argument("--r", type=float, default=None, help="trace bound (bounded supports only)")
    b.add_argument("--no-spot-check", action="store_true")
    b.add_argument("--seed", type=int, default=0, help="spot-check sampling seed")
    b.add_argument("--out", type=Path, help="also write the result JSON here")
    _solver_args(b)

    c = sub.add_parser("calibrate", help="empirical confidence curve and radius selection")
    c.add_argument("instance", type=Path)
    c.add_argument("dataset", type=Path)
    c.add_argument("--beta", type=float, default=0.1)
    c.add_argument("--grid", type=_floats, default=list(DEFAULT_GRID))
    c.add_argument("--K", type=int, default=DEFAULT_K)
    c.add_argument("--NT", type=int, default=None)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--mode", choices=["bisect", "full"], default="bisect")
    c.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    c.add_argument("--out", type=Path, default=Path("curve.csv"))
    _solver_args(c)

    e = sub.add_parser("experiment", help="calibrated trials on a case study")
    e.add_argument("--case", required=True)
    e.add_argument("--N-list", type=_ints, required=True)
    e.add_argument("--trials", type=int, default=100)
    e.add_argument("--beta", type=float, default=0.1)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--instance-seed", type=int, default=None, help="seed of the true distribution")
    e.add_argument("--grid", type=_floats, default=list(DEFAULT_GRID))
    e.add_argument("--K", type=int, default=DEFAULT_K)
    e.add_argument("--NT", type=int, default=None)
    e.add_argument("--sim-samples", type=int, default=100_000)
    e.add_argument("--mode", choices=["bisect", "full"], default="bisect")
    e.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    e.add_argument("--out", type=Path, default=Path("results"))
    _solver_args(e)

    s = sub.add_parser("simulate", help="Monte Carlo estimate of the expected optimal value")
    s.add_argument("instance", type=Path)
    s.add_argument("distribution", type=Path)
    s.add_argument("--samples", type=int, default=100_000)
    s.add_argument("--seed", type=int, default=0)

    m = sub.add_parser("make-case", help="write a case study's instance and distribution JSON")
    m.add_argument("--case", required=True)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--samples", type=int, default=0, help="also draw a dataset of this size")
    m.add_argument("--out", type=Path, default=Path("."))

    r = sub.add_parser("replay", help="rerun the command recorded in a manifest")
    r.add_argument("manifest_path", type=Path)
    return p


def _read_json(path: Path):
    try:
        return json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise OSError(f"no such file: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc


def _load_instance(path: Path) -> MixedBinaryProgram:
    try:
        return enforce_binary_bounds(MixedBinaryProgram.from_json(_read_json(path)))
    except (DimensionError, ValueError, TypeError) as exc:
        raise ConfigError(f"invalid instance {path}: {exc}") from exc


def _load_dataset(path: Path) -> Dataset:
    try:
        return Dataset.from_json(_read_json(path))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid dataset {path}: {exc}") from exc


def _solver_opts(a) -> dict:
    if a.feas_tol <= 0 or a.gap_tol <= 0 or a.max_iter < 1:
        raise ConfigError("solver tolerances and --max-iter must be positive")
    return {"feas_tol": a.feas_tol, "gap_tol": a.gap_tol, "max_iter": a.max_iter}


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_bound(a) -> tuple[int, list[Path]]:
    if a.epsilon < 0 or not np.isfinite(a.epsilon):
        raise ConfigError("--epsilon must be a finite nonnegative number")
    if a.r is not None and a.r <= 0:
        raise ConfigError("--r must be positive")
    prog = _load_instance(a.instance)
    data = _load_dataset(a.dataset)
    if data.k != prog.k:
        raise ConfigError(f"dataset has k={data.k} but the instance expects k={prog.k}")
    res = solve_bound(prog, data, a.epsilon, a.r, spot_check=not a.no_spot_check, seed=a.seed, **_solver_opts(a))
    out = res.to_json()
    out["certified"] = res.certified
    if res.spot_check_passed is not None:
        out["spot_check_passed"] = res.spot_check_passed
    _emit(out)
    written = []
    if a.out:
        a.out.parent.mkdir(parents=True, exist_ok=True)
        a.out.write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
        written.append(a.out)
    return (EXIT_OK if res.status.value == "optimal" else EXIT_SOLVER), written


def _check_calibration_args(a):
    if not 0 <= a.beta < 1:
        raise ConfigError("--beta must lie in [0, 1)")
    if a.K < 1:
        raise ConfigError("--K must be positive")
    if a.jobs < 1:
        raise ConfigError("--jobs must be positive")
    if not a.grid or min(a.grid) < 0:
        raise ConfigError("--grid needs nonnegative radii")


def cmd_calibrate(a) -> tuple[int, list[Path]]:
    _check_calibration_args(a)
    prog = _load_instance(a.instance)
    data = _load_dataset(a.dataset)
    curve = calibration_curve(
        prog, data, a.grid, a.K, a.NT, a.seed, mode=a.mode, jobs=a.jobs, solver_opts=_solver_opts(a)
    )
    a.out.parent.mkdir(parents=True, exist_ok=True)
    curve.to_csv(a.out)
    eps = select_radius(curve, a.beta)
    _emit({"epsilon": eps, "beta": a.beta, "curve": str(a.out), "K": curve.K, "N_T": curve.N_T})
    return EXIT_OK, [a.out]


def cmd_experiment(a) -> tuple[int, list[Path]]:
    _check_calibration_args(a)
    if a.case not in CASES:
        raise ConfigError(f"unknown case {a.case!r}; expected one of {', '.join(CASES)}")
    if a.trials < 1 or a.sim_samples < 1 or not a.N_list or min(a.N_list) < 2:
        raise ConfigError("--trials and --sim-samples must be positive and every N at least 2")
    res = run_trials(
        a.case, a.N_list, a.trials, a.beta, a.seed, K=a.K, grid=a.grid, N_T=a.NT,
        sim_samples=a.sim_samples, calibration_mode=a.mode, jobs=a.jobs,
        solver_opts=_solver_opts(a), instance_seed=a.instance_seed,
    )
    paths = res.write(a.out)
    _emit({"out": str(a.out), "radii": {str(k): v for k, v in res.radii.items()}, "aggregates": res.aggregates})
    return EXIT_OK, list(paths.values())


def cmd_simulate(a) -> tuple[int, list[Path]]:
    if a.samples < 1:
        raise ConfigError("--samples must be positive")
    prog = _load_instance(a.instance)
    try:
        spec = spec_from_json(_read_json(a.distribution))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"invalid distribution {a.distribution}: {exc}") from exc
    if spec.dim + 1 != prog.k:
        raise ConfigError(f"distribution has dimension {spec.dim}, instance expects {prog.k - 1}")
    sim = simulate(prog, spec, a.samples, a.seed)
    _emit({"value": sim.value, "stderr": sim.stderr, "samples": sim.samples, "seed": a.seed})
    return EXIT_OK, []


def cmd_make_case(a) -> tuple[int, list[Path]]:
    if a.case not in CASES:
        raise ConfigError(f"unknown case {a.case!r}; expected one of {', '.join(CASES)}")
    case = build_case(a.case, a.seed)
    a.out.mkdir(parents=True, exist_ok=True)
    paths = [a.out / f"{a.case}_instance.json", a.out / f"{a.case}_distribution.json"]
    paths[0].write_text(json.dumps(case.program.to_json(), indent=2) + "\n")
    paths[1].write_text(json.dumps(case.distribution.to_json(), indent=2) + "\n")
    if a.samples:
        from .experiments import sample

        data = sample(case.distribution, a.samples, a.seed)
        paths.append(a.out / f"{a.case}_dataset.json")
        paths[2].write_text(json.dumps(data.to_json(), indent=2) + "\n")
    _emit({"written": [str(p) for p in paths]})
    return EXIT_OK, paths


COMMANDS = {
    "bound": cmd_bound,
    "calibrate": cmd_calibrate,
    "experiment": cmd_experiment,
    "simulate": cmd_simulate,
    "make-case": cmd_make_case,
}


def _config_dict(a) -> dict:
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(a).items())}


def _manifest_path(a) -> Path:
    if a.manifest is not None:
        return a.manifest
    out = getattr(a, "out", None)
    if out is not None:
        return (out if out.suffix == "" else out.parent) / "manifest.json"
    return Path("wasscopos_manifest.json")


def _write_manifest(a, argv, code, outputs) -> None:
    path = _manifest_path(a)
    data = {
        "format": MANIFEST_FORMAT,
        "version": __version__,
        "argv": list(argv),
        "config": _config_dict(a),
        "exit_code": code,
        "outputs": [str(p) for p in outputs],
    }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(data, indent=2) + "\n")
    except OSError as exc:
        log.warning("could not write manifest %s: %s", path, exc)


def _fail(code: int, kind: str, message: str) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("WASSCOPOS_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
        if a.command == "replay":
            data = _read_json(a.manifest_path)
            if data.get("format") != MANIFEST_FORMAT or not isinstance(data.get("argv"), list):
                raise ConfigError(f"{a.manifest_path} is not a wasscopos manifest")
            return main(data["argv"])
        code, outputs = COMMANDS[a.command](a)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", str(exc))
    except (CalibrationError, DimensionError) as exc:
        return _fail(EXIT_CONFIG, "config", str(exc))
    except (InfeasibleError, UnboundedError) as exc:
        return _fail(EXIT_CONFIG, "instance", str(exc))
    except BoundError as exc:
        return _fail(EXIT_SOLVER, "solver", str(exc))
    except OSError as exc:
        return _fail(EXIT_IO, "io", str(exc))
    _write_manifest(a, argv, code, outputs)
    return code


if __name__ == "__main__":
    sys.exit(main())
