from __future__ import annotations

import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from missreg import __version__, generate, make_model
from missreg.cli import main
from missreg.io import read_table, write_rows


@pytest.fixture(scope="module")
def data_csv(tmp_path_factory):
    model = make_model(12, 2, 0.8, sigma_eps=0.1, seed=3)
    d, y, _ = generate(model, 300, 5)
    vals = np.where(np.asarray(d.mask) == 1, np.asarray(d.values), math.nan)
    path = tmp_path_factory.mktemp("data") / "data.csv"
    names = [f"x{j}" for j in range(12)]
    write_rows(path, names + ["y"], [list(map(float, r)) + [float(v)] for r, v in zip(vals, y)])
    return path, model


def _run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


# ---------------------------------------------------------------- exit codes

def test_unknown_flag_is_usage_error(capsys):
    code, _, err = _run(["fit", "--bogus"], capsys)
    assert code == 1
    assert "usage:" in err
    assert json.loads(err.strip().splitlines()[-1])["stage"] == "usage"


def test_missing_subcommand_is_usage_error(capsys):
    code, _, err = _run([], capsys)
    assert code == 1 and "usage:" in err


def test_missing_file_is_input_error(capsys, tmp_path):
    code, _, err = _run(["fit", "--input", tmp_path / "nope.csv", "--response", "y",
                         "--sigma-eps", "0.1"], capsys)
    assert code == 1
    assert json.loads(err)["stage"] == "input"


def test_auto_lambda_needs_noise_level(capsys, data_csv):
    code, _, err = _run(["fit", "--input", data_csv[0], "--response", "y"], capsys)
    assert code == 1 and "sigma-eps" in json.loads(err)["error"]


def test_infeasible_lambda_exits_two_with_dantzig_stage(capsys, tmp_path):
    # A singular known covariance with a target outside its range.
    data = tmp_path / "d.csv"
    data.write_text("a,b,y\n1,-1,1\n-1,1,-1\n")
    sigma = tmp_path / "s.csv"
    sigma.write_text("1,1\n1,1\n")
    code, _, err = _run(["fit", "--input", data, "--response", "y", "--known-sigma", sigma,
                         "--lambda", "0.1", "--sigma-eps", "0.1"], capsys)
    assert code == 2
    msg = json.loads(err)
    assert msg["stage"] == "dantzig" and msg["type"] == "numerical"
    assert "lambda" in msg["error"]


# ---------------------------------------------------------------- fit

def test_fit_report_and_provenance(capsys, data_csv, tmp_path):
    path, model = data_csv
    csv_out = tmp_path / "beta.csv"
    code, out, _ = _run(["fit", "--input", path, "--response", "y", "--sigma-eps", "0.1",
                         "--csv", csv_out], capsys)
    assert code == 0
    rep = json.loads(out)
    assert rep["version"] == __version__
    assert rep["seed"] == 42
    assert len(rep["config_hash"]) == 16
    assert rep["names"] == [f"x{j}" for j in range(12)]
    assert rep["kind"] == "surrogate-unknown"
    assert rep["diagnostics"]["rates_estimated"] is True
    beta = np.array(rep["beta"])
    assert np.linalg.norm(beta - model.beta_star) < 0.5
    with open(csv_out, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["name", "beta"]
    assert [r[0] for r in rows[1:]] == rep["names"]
    assert np.array_equal([float(r[1]) for r in rows[1:]], beta)


def test_config_hash_stable(capsys, data_csv):
    args = ["fit", "--input", data_csv[0], "--response", "y", "--sigma-eps", "0.1"]
    a = json.loads(_run(args, capsys)[1])["config_hash"]
    b = json.loads(_run(args, capsys)[1])["config_hash"]
    c = json.loads(_run(args + ["--lambda-constant", "0.5"], capsys)[1])["config_hash"]
    assert a == b != c


# ---------------------------------------------------------------- precision

def test_precision_writes_matrix(capsys, data_csv, tmp_path):
    theta = tmp_path / "theta.csv"
    code, out, _ = _run(["precision", "--input", data_csv[0], "--response", "y",
                         "--theta", theta, "--solver", "homotopy"], capsys)
    assert code == 0
    rep = json.loads(out)
    assert rep["symmetrized"] and rep["converged"] and rep["nu_used"] > 0
    header, M = read_table(theta)
    assert header == [f"x{j}" for j in range(12)]
    assert np.array_equal(M, M.T)


# ---------------------------------------------------------------- ci

def test_ci_round_trip_through_fit_report(capsys, data_csv, tmp_path):
    path, _ = data_csv
    common = ["--input", path, "--response", "y", "--sigma-eps", "0.1", "--solver", "homotopy"]
    fit_json = tmp_path / "fit.json"
    assert _run(["fit", *common, "--out", fit_json], capsys)[0] == 0
    code, direct, _ = _run(["ci", *common, "--coords", "x0,3"], capsys)
    assert code == 0
    code, via, _ = _run(["ci", *common, "--coords", "x0,3", "--beta-from", fit_json], capsys)
    assert code == 0
    a, b = json.loads(direct)["intervals"], json.loads(via)["intervals"]
    assert [r["coord"] for r in a] == [0, 3]
    for ra, rb in zip(a, b):
        for key in ("beta_debiased", "lower", "upper", "var"):
            assert ra[key] == pytest.approx(rb[key], rel=1e-12, abs=1e-12)


def test_ci_interval_contents(capsys, data_csv, tmp_path):
    path, model = data_csv
    out_csv = tmp_path / "ci.csv"
    code, out, _ = _run(["ci", "--input", path, "--response", "y", "--sigma-eps", "0.1",
                         "--coords", "x0", "--alpha", "0.1", "--csv", out_csv], capsys)
    assert code == 0
    row = json.loads(out)["intervals"][0]
    assert row["lower"] < row["beta_debiased"] < row["upper"]
    half = 1.6448536269514722 * math.sqrt(row["var"] / 300)
    assert row["upper"] - row["lower"] == pytest.approx(2 * half, rel=1e-9)
    with open(out_csv, newline="") as fh:
        assert next(csv.reader(fh)) == ["coord", "name", "beta_debiased", "lower", "upper", "var"]


def test_ci_unknown_coordinate(capsys, data_csv):
    code, _, err = _run(["ci", "--input", data_csv[0], "--response", "y", "--sigma-eps", "0.1",
                         "--coords", "nope"], capsys)
    assert code == 1 and "nope" in json.loads(err)["error"]


# ---------------------------------------------------------------- simulate

def test_simulate_smoke(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"experiment": "coverage", "n": 300, "p": 15, "s": 2, "T": 2}))
    code, out, _ = _run(["simulate", "--config", cfg, "--out-dir", tmp_path / "res",
                         "--seed", "7"], capsys)
    assert code == 0
    rep = json.loads(out)
    assert rep["seed"] == 7 and rep["config"]["seed"] == 7
    assert "avgcov[J0]" in rep["table"]
    assert (tmp_path / "res" / "report.json").exists()
    assert (tmp_path / "res" / "table.csv").exists()


def test_simulate_bad_config(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text("[1, 2]")
    code, _, err = _run(["simulate", "--config", cfg, "--out-dir", tmp_path], capsys)
    assert code == 1 and json.loads(err)["stage"] == "input"


# ---------------------------------------------------------------- kl-verify

def test_kl_verify_linked_pair(capsys):
    code, out, _ = _run(["kl-verify", "--construction", "theorem3", "--p", "8", "--s", "4",
                         "--trials", "2000"], capsys)
    assert code == 0
    rep = json.loads(out)
    assert rep["equivalence"]["passed"] and rep["equivalence"]["violations"] == 0
    assert rep["kl_exact"] == pytest.approx(rep["kl_closed_form"], rel=1e-10)
    mc = rep["kl_montecarlo"]
    assert abs(mc["estimate"] - rep["kl_exact"]) <= 4 * mc["stderr"]


def test_kl_verify_packing(capsys):
    code, out, _ = _run(["kl-verify", "--construction", "theorem2", "--p", "12", "--s", "4",
                         "--delta", "0.2", "--max-size", "6"], capsys)
    assert code == 0
    rep = json.loads(out)
    assert rep["min_hamming"] >= 2 and rep["kl_computed"] and rep["max_kl"] >= 0


def test_kl_verify_bad_parameters(capsys):
    code, _, err = _run(["kl-verify", "--construction", "theorem3", "--p", "8", "--s", "2"], capsys)
    assert code == 1 and "s >= 4" in json.loads(err)["error"]


# ---------------------------------------------------------------- entry point

def test_console_script_help_and_version():
    out = subprocess.run([sys.executable, "-m", "missreg.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("fit", "precision", "ci", "simulate", "kl-verify"):
        assert cmd in out.stdout
    ver = subprocess.run([sys.executable, "-m", "missreg.cli", "--version"], capture_output=True, text=True)
    assert __version__ in ver.stdout
