import json
import subprocess
import sys

import numpy as np
import pytest

from wasscopos.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, main
from wasscopos.experiments import build_case, sample
from wasscopos.model import DeterministicOracle


@pytest.fixture(autouse=True)
def _scratch_cwd(tmp_path, monkeypatch):
    # runs without --out drop their manifest in the working directory
    monkeypatch.chdir(tmp_path)


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def write(path, obj):
    path.write_text(json.dumps(obj))
    return path


@pytest.fixture
def ssa_files(tmp_path, capsys):
    assert run(capsys, "make-case", "--case", "ssa", "--seed", 1, "--samples", 12, "--out", tmp_path)[0] == 0
    return tmp_path / "ssa_instance.json", tmp_path / "ssa_distribution.json", tmp_path / "ssa_dataset.json"


def test_bound_at_a_dirac(tmp_path, ssa_files, capsys):
    inst = ssa_files[0]
    ds = write(tmp_path / "one.json", {"samples": [[3, 1, 2]]})
    code, out, _ = run(capsys, "bound", inst, ds, "--epsilon", 0, "--out", tmp_path / "res" / "bound.json")
    assert code == EXIT_OK
    res = json.loads(out)
    assert res["status"] == "optimal" and res["certified"]
    assert 3 - 1e-6 <= res["value"] <= 3.03
    assert json.loads((tmp_path / "res" / "bound.json").read_text())["value"] == res["value"]
    assert (tmp_path / "res" / "manifest.json").exists()


def test_missing_file_is_an_io_error(tmp_path, capsys):
    code, _, err = run(capsys, "bound", tmp_path / "nope.json", tmp_path / "nope.json", "--epsilon", 0.1)
    assert code == EXIT_IO
    assert json.loads(err.strip().splitlines()[-1])["error"] == "io"


def test_negative_radius_is_a_config_error(ssa_files, capsys):
    code, _, err = run(capsys, "bound", ssa_files[0], ssa_files[2], "--epsilon", -1)
    assert code == EXIT_CONFIG
    assert json.loads(err.strip().splitlines()[-1])["error"] == "config"


def test_malformed_json_is_a_config_error(tmp_path, ssa_files, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert run(capsys, "bound", ssa_files[0], bad, "--epsilon", 0.1)[0] == EXIT_CONFIG


def test_dimension_mismatch_is_a_config_error(tmp_path, ssa_files, capsys):
    ds = write(tmp_path / "short.json", {"samples": [[3, 1]]})
    assert run(capsys, "bound", ssa_files[0], ds, "--epsilon", 0.1)[0] == EXIT_CONFIG


def test_usage_errors_exit_with_config(capsys):
    assert run(capsys, "bound")[0] == EXIT_CONFIG
    assert run(capsys, "frobnicate")[0] == EXIT_CONFIG


def test_unknown_case_is_a_config_error(tmp_path, capsys):
    code, _, _ = run(capsys, "experiment", "--case", "tsp", "--N-list", "10", "--out", tmp_path)
    assert code == EXIT_CONFIG


def test_calibrate_singleton_grid(tmp_path, ssa_files, capsys):
    code, out, _ = run(
        capsys, "calibrate", ssa_files[0], ssa_files[2], "--grid", "2.0", "--K", 4,
        "--jobs", 1, "--out", tmp_path / "curve.csv",
    )
    assert code == EXIT_OK
    assert json.loads(out)["epsilon"] == 2.0
    assert (tmp_path / "curve.csv").read_text().startswith("epsilon,confidence,K,N_T,seed")


def test_calibrate_beta_threshold(tmp_path, ssa_files, capsys):
    picks = {}
    for beta in (0.05, 0.5):
        _, out, _ = run(
            capsys, "calibrate", ssa_files[0], ssa_files[2], "--grid", "0,0.05,0.2,1,2", "--K", 6,
            "--beta", beta, "--jobs", 1, "--out", tmp_path / f"curve{beta}.csv",
        )
        picks[beta] = json.loads(out)["epsilon"]
    assert picks[0.5] <= picks[0.05]


def test_calibrate_rejects_bad_beta(ssa_files, capsys):
    assert run(capsys, "calibrate", ssa_files[0], ssa_files[2], "--beta", 1.5)[0] == EXIT_CONFIG


def test_simulate_single_sample_is_one_oracle_call(ssa_files, capsys):
    code, out, _ = run(capsys, "simulate", ssa_files[0], ssa_files[1], "--samples", 1, "--seed", 7)
    assert code == EXIT_OK
    case = build_case("ssa", 1)
    xi = sample(case.distribution, 1, np.random.default_rng(7)).samples
    assert json.loads(out)["value"] == DeterministicOracle(case.program).values(xi)[0]


def test_simulate_is_seeded(ssa_files, capsys):
    args = ("simulate", ssa_files[0], ssa_files[1], "--samples", 500, "--seed", 3)
    assert run(capsys, *args)[1] == run(capsys, *args)[1]


def test_experiment_row_count(tmp_path, capsys):
    code, _, _ = run(
        capsys, "experiment", "--case", "knapsack", "--N-list", "10,20", "--trials", 5,
        "--K", 3, "--grid", "0.1,1,2", "--sim-samples", 1000, "--jobs", 1, "--out", tmp_path,
    )
    assert code == EXIT_OK
    lines = (tmp_path / "trials.csv").read_text().splitlines()
    assert lines[0] == "case,N,trial,epsilon,v_wb,v_sb,gap,covered,runtime_ms"
    assert len(lines) == 1 + 10
    assert {p.name for p in tmp_path.iterdir()} >= {"trials.csv", "aggregates.csv", "curve.csv", "manifest.json"}


def strip_runtime(text):
    rows = [line.split(",") for line in text.splitlines()]
    drop = rows[0].index("runtime_ms") if "runtime_ms" in rows[0] else None
    return [[c for j, c in enumerate(r) if j != drop] for r in rows]


def test_manifest_replay_reproduces_outputs(tmp_path, capsys):
    out = tmp_path / "run"
    args = [
        "experiment", "--case", "ssa", "--N-list", "10", "--trials", 3, "--K", 3,
        "--grid", "0.05,0.5,2", "--sim-samples", 800, "--jobs", 1, "--out", out,
    ]
    assert run(capsys, *args)[0] == EXIT_OK
    first = {p.name: p.read_text() for p in out.glob("*.csv")}
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["case"] == "ssa" and manifest["exit_code"] == 0
    for p in out.glob("*.csv"):
        p.unlink()
    saved = tmp_path / "saved_manifest.json"
    saved.write_text((out / "manifest.json").read_text())
    assert run(capsys, "replay", saved)[0] == EXIT_OK
    for name, text in first.items():
        assert strip_runtime((out / name).read_text()) == strip_runtime(text)


def test_replay_rejects_other_json(tmp_path, capsys):
    assert run(capsys, "replay", write(tmp_path / "x.json", {"argv": 3}))[0] == EXIT_CONFIG


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "wasscopos", "make-case", "--case", "project", "--out", str(tmp_path)],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0, proc.stderr
    assert json.loads((tmp_path / "project_instance.json").read_text())["A"]
