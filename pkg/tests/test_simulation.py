from __future__ import annotations

import csv
import json
import math

import numpy as np
import pytest
from scipy.stats import binomtest

from missreg import InferenceSettings, banded_precision, generate, make_model, run_coverage, \
    run_normality, run_rate_sweep
from missreg.experiments import DEFAULTS, resolve_config, run_experiment
from missreg.simulation import TABLE_GROUPS, replication_seed


# ---------------------------------------------------------------- model

def test_banded_precision_entries():
    O = banded_precision(8)
    assert O[0, 0] == 1.0 and O[0, 1] == 0.5 and O[0, 5] == 0.5**5 and O[0, 6] == 0.0
    assert np.array_equal(O, O.T)
    assert np.linalg.eigvalsh(O).min() > 0


def test_model_invariants():
    m = make_model(50, 7, 0.8)
    assert len(m.support) == 7 == np.count_nonzero(m.beta_star)
    assert set(np.abs(m.beta_star[list(m.support)])) == {1.0}
    assert m.signal_norm == pytest.approx(math.sqrt(7))
    assert np.allclose(np.linalg.inv(m.sigma0), banded_precision(50), atol=1e-10)
    assert np.allclose(m.factor @ m.factor, m.sigma0, atol=1e-12)
    assert np.array_equal(m.rho, np.full(50, 0.8))
    assert m.sigma_x == pytest.approx(math.sqrt(np.diag(m.sigma0).max()))


def test_model_seed_controls_support():
    assert make_model(100, 5, 0.9, seed=1).support == make_model(100, 5, 0.9, seed=1).support
    assert make_model(100, 5, 0.9, seed=1).support != make_model(100, 5, 0.9, seed=2).support


def test_model_rejects_bad_inputs():
    with pytest.raises(ValueError):
        make_model(5, 6, 0.9)
    with pytest.raises(ValueError):
        make_model(5, 2, 0.0)
    with pytest.raises(ValueError):
        make_model(5, 2, [0.5, 1.2, 0.5, 0.5, 0.5])


def test_with_rho_keeps_everything_else():
    m = make_model(20, 3, 0.9)
    m2 = m.with_rho(0.5)
    assert m2.support == m.support and np.array_equal(m2.sigma0, m.sigma0)
    assert np.array_equal(m2.rho, np.full(20, 0.5))


# ---------------------------------------------------------------- data generation

def test_noiseless_full_observation_is_exact():
    m = make_model(10, 3, 1.0, sigma_eps=0.0)
    d, y, X = generate(m, 30, 0)
    assert np.array_equal(y, X @ m.beta_star)
    assert np.array_equal(np.asarray(d.values), X)


def test_generated_covariance_matches_population():
    m = make_model(6, 2, 1.0)
    _, _, X = generate(m, 40000, 1)
    S = X.T @ X / 40000
    # Var of a Gaussian second moment: (S_ii S_jj + S_ij^2) / n.
    d = np.diag(m.sigma0)
    se = np.sqrt((np.outer(d, d) + m.sigma0**2) / 40000)
    assert np.all(np.abs(S - m.sigma0) <= 4.5 * se)


def test_mask_rate_is_binomial():
    m = make_model(10, 2, 0.7)
    d, _, _ = generate(m, 2000, 3)
    k = int(np.asarray(d.mask).sum())
    assert binomtest(k, 20000, 0.7).pvalue > 1e-4


def test_generate_deterministic_bitwise():
    m = make_model(10, 2, 0.7)
    a = generate(m, 50, replication_seed(42, 3))
    b = generate(m, 50, replication_seed(42, 3))
    assert all(np.array_equal(np.asarray(u), np.asarray(v)) for u, v in
               [(a[0].values, b[0].values), (a[0].mask, b[0].mask), (a[1], b[1]), (a[2], b[2])])


# ---------------------------------------------------------------- coverage runner

@pytest.fixture(scope="module")
def small_report():
    m = make_model(30, 3, 0.8)
    return m, run_coverage(m, 400, 6, seed=5)


def test_coverage_report_shapes(small_report):
    m, rep = small_report
    assert rep.covered.shape == rep.length.shape == rep.delta.shape == (6, 30)
    assert rep.failures == 0 and rep.failure_stages == {}
    assert rep.support == m.support
    assert set(rep.groups) == set(TABLE_GROUPS)
    assert rep.groups["J0"] == m.support
    assert len(rep.groups["j in J0"]) == 1 and rep.groups["j in J0"][0] in m.support
    assert rep.groups["j not in J0"][0] not in m.support


def test_coverage_group_means_are_coordinate_means(small_report):
    _, rep = small_report
    assert np.allclose(rep.avgcov, rep.covered.mean(axis=0))
    assert np.allclose(rep.avglen, rep.length.mean(axis=0))
    j0 = [rep.coords.index(j) for j in rep.groups["J0"]]
    assert rep.group_avgcov("J0") == pytest.approx(rep.avgcov[j0].mean())
    row = rep.table_row()
    assert row["avglen[J0c]"] == pytest.approx(rep.group_avglen("J0c"))
    assert np.all(rep.avglen > 0)


def test_coverage_deterministic_bitwise(small_report):
    m, rep = small_report
    again = run_coverage(m, 400, 6, seed=5)
    assert np.array_equal(rep.covered, again.covered)
    assert np.array_equal(rep.delta, again.delta)


def test_coverage_parallel_matches_serial():
    m = make_model(20, 2, 0.8)
    a = run_coverage(m, 300, 4, seed=9, workers=1)
    b = run_coverage(m, 300, 4, seed=9, workers=2)
    assert np.array_equal(a.delta, b.delta)


def test_coverage_coordinate_subset(small_report):
    m, rep = small_report
    coords = (m.support[0], 0 if 0 not in m.support else 1)
    sub = run_coverage(m, 400, 6, seed=5, coords=coords)
    full_idx = [rep.coords.index(c) for c in coords]
    assert np.allclose(sub.delta, rep.delta[:, full_idx], rtol=1e-10, atol=1e-12)


def test_wider_alpha_gives_shorter_intervals():
    m = make_model(20, 2, 0.8)
    a = run_coverage(m, 300, 4, alpha=0.05, seed=2)
    b = run_coverage(m, 300, 4, alpha=0.5, seed=2)
    ratio = 1.959963984540054 / 0.6744897501960817
    assert np.allclose(a.length / b.length, ratio, rtol=1e-9)
    assert np.all(b.avgcov <= a.avgcov)


def test_redraw_beta_changes_supports():
    m = make_model(20, 2, 0.8)
    rep = run_coverage(m, 300, 4, seed=2, redraw_beta=True)
    means = rep.meta["redraw_group_means"]
    assert set(means) == {"avgcov[J0]", "avglen[J0]", "avgcov[J0c]", "avglen[J0c]"}
    assert 0 <= means["avgcov[J0]"] <= 1


def test_failed_replications_are_counted():
    from missreg import ClimeConfig
    # One fully observed row: the covariance has rank one, so no column of
    # the approximate inverse can meet a small tolerance.
    m = make_model(10, 2, 1.0)
    bad = InferenceSettings(clime=ClimeConfig(nu=1e-3))
    rep = run_coverage(m, 1, 3, seed=1, settings=bad)
    assert rep.failures == 3
    assert rep.failure_stages == {"clime": 3}
    assert np.isnan(rep.covered).all()


def test_runner_input_errors():
    m = make_model(10, 2, 0.8)
    with pytest.raises(ValueError):
        run_coverage(m, 50, 0)
    with pytest.raises(ValueError):
        run_coverage(m, 50, 1, coords=[])
    with pytest.raises(ValueError, match="T >= 30"):
        run_normality(m, 50, 10, [0])


# ---------------------------------------------------------------- normality and rate sweep

@pytest.mark.slow
def test_normality_runner_outputs():
    m = make_model(30, 3, 0.9)
    rep = run_normality(m, 500, 40, [m.support[0], 0 if 0 not in m.support else 1], seed=3)
    assert rep.delta.shape == (40, 2)
    assert np.all((0 <= rep.ks_pvalue) & (rep.ks_pvalue <= 1))
    edges, counts = rep.histogram(bins=10)
    assert len(edges) == 11 and counts.shape == (2, 10)
    assert counts.sum() == 80


def test_rate_sweep_lower_rate_gives_larger_error():
    m = make_model(20, 2, 0.9)
    rep = run_rate_sweep(m, 400, [0.5, 1.0], 4, seed=1)
    assert rep.errors.shape == (2, 4)
    assert rep.median_error[0] > rep.median_error[1]
    assert math.isfinite(rep.slope)


def test_rate_sweep_error_decreases_with_n():
    m = make_model(20, 2, 0.7)
    small = run_rate_sweep(m, 300, [0.7], 8, seed=1).median_error[0]
    large = run_rate_sweep(m, 3000, [0.7], 8, seed=1).median_error[0]
    assert large < small


def test_rate_sweep_errors():
    m = make_model(10, 2, 0.8)
    with pytest.raises(ValueError):
        run_rate_sweep(m, 50, [], 2)
    with pytest.raises(ValueError):
        run_rate_sweep(m, 50, [0.0], 2)


# ---------------------------------------------------------------- experiment configs

def test_resolve_config_rejects_unknown_keys():
    with pytest.raises(ValueError, match="unknown config keys"):
        resolve_config({"bogus": 1})
    with pytest.raises(ValueError, match="experiment"):
        resolve_config({"experiment": "nope"})


def test_full_flag_applies_overrides():
    cfg = resolve_config({"full": True, "full_overrides": {"T": 7, "n": 9}})
    assert cfg["T"] == 7 and cfg["n"] == 9
    assert resolve_config({})["T"] == DEFAULTS["T"]


def test_run_experiment_coverage_outputs(tmp_path):
    cfg = {"experiment": "coverage", "n": 300, "p": 20, "s": 2, "T": 3, "seed": 4}
    summary = run_experiment(cfg, tmp_path)
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["table"] == pytest.approx(summary["table"])
    assert set(report["table"]) == {f"{k}[{g}]" for g in TABLE_GROUPS for k in ("avgcov", "avglen")}
    with open(tmp_path / "table.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:3] == ["n", "p", "rho"] and len(rows) == 2
    with open(tmp_path / "per_coordinate.csv") as fh:
        assert len(list(csv.reader(fh))) == 21
    with open(tmp_path / "delta.csv") as fh:
        assert len(list(csv.reader(fh))) == 4


def test_run_experiment_rate_sweep_outputs(tmp_path):
    cfg = {"experiment": "rate-sweep", "n": 300, "p": 20, "s": 2, "T": 2,
           "rho_grid": [0.6, 0.9], "estimator": "known"}
    summary = run_experiment(cfg, tmp_path)
    assert summary["estimator"] == "known"
    assert len(summary["median_error"]) == 2
    with open(tmp_path / "rate_sweep.csv") as fh:
        assert len(list(csv.reader(fh))) == 3
