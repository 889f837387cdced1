from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from missreg import (
    InfeasibleError,
    PathInfeasible,
    SolverConfig,
    certify,
    homotopy_solve,
    lp_oracle,
    solve_l1_linf,
)
from missreg.solver import L1LinfSolver

from oracles import l1_linf_linprog

ADMM = SolverConfig()
EXACT = SolverConfig(method="homotopy")
METHODS = pytest.mark.parametrize("cfg", [ADMM, EXACT], ids=["admm", "homotopy"])


def _instance(rng, k=None, m=None):
    k = k or int(rng.integers(1, 7))
    m = m or int(rng.integers(1, 7))
    A = rng.standard_normal((k, m))
    b = rng.standard_normal(k)
    lam = float(rng.uniform(0.05, 0.9)) * np.abs(b).max()
    return A, b, lam


# ---------------------------------------------------------------- config

@pytest.mark.parametrize("kw", [
    {"penalty": 0.0}, {"tol_primal": 0.0}, {"tol_dual": -1.0}, {"max_iters": 0},
    {"over_relaxation": 0.9}, {"over_relaxation": 1.9}, {"method": "simplex"},
])
def test_config_ranges(kw):
    with pytest.raises(ValueError):
        SolverConfig(**kw)


def test_config_defaults():
    c = SolverConfig()
    assert (c.penalty, c.tol_primal, c.tol_dual, c.max_iters, c.over_relaxation) == \
        (1.0, 1e-7, 1e-7, 20000, 1.5)


# ---------------------------------------------------------------- worked examples

@METHODS
def test_zero_target_gives_zero(cfg):
    for lam in (0.0, 0.5):
        rep = solve_l1_linf(np.eye(3), np.zeros(3), lam, cfg)
        assert np.array_equal(rep.solution, np.zeros(3))
        assert rep.objective == 0.0


@METHODS
def test_identity_is_soft_threshold(cfg):
    rep = solve_l1_linf(np.eye(3), [5.0, 0.5, -2.0], 1.0, cfg)
    assert rep.converged
    assert np.allclose(rep.solution, [4.0, 0.0, -1.0], atol=1e-9)


@METHODS
def test_random_four_by_four_matches_lp(cfg):
    rng = np.random.default_rng(4)
    A = rng.standard_normal((4, 4))
    b = rng.standard_normal(4)
    rep = solve_l1_linf(A, b, 0.3, cfg)
    ref = np.abs(lp_oracle(A, b, 0.3)).sum()
    assert abs(rep.objective - ref) <= 1e-6 * (1 + ref)


def test_lp_oracle_examples():
    assert np.array_equal(lp_oracle(np.eye(2), [0.0, 0.0], 0.0), [0.0, 0.0])
    assert np.allclose(lp_oracle([[1.0]], [3.0], 1.0), [2.0], atol=1e-12)
    assert np.allclose(lp_oracle([[2.0, 1.0], [1.0, 3.0]], [1.0, 1.0], 0.0), [0.4, 0.2], atol=1e-12)


def test_lp_oracle_infeasible():
    with pytest.raises(ValueError, match="infeasible"):
        lp_oracle([[1.0], [1.0]], [1.0, -1.0], 0.5)


def test_lp_oracle_size_limit():
    with pytest.raises(ValueError):
        lp_oracle(np.ones((2, 13)), np.ones(2), 0.1)


def test_lp_oracle_deterministic(rng):
    A, b, lam = _instance(rng, 5, 6)
    assert np.array_equal(lp_oracle(A, b, lam), lp_oracle(A, b, lam))


def test_lp_oracle_agrees_with_highs(rng):
    for _ in range(100):
        A, b, lam = _instance(rng)
        _, ref = l1_linf_linprog(A, b, lam)
        if np.isnan(ref):
            with pytest.raises(ValueError):
                lp_oracle(A, b, lam)
            continue
        assert abs(np.abs(lp_oracle(A, b, lam)).sum() - ref) <= 1e-8 * (1 + ref)


# ---------------------------------------------------------------- infeasibility

@METHODS
def test_infeasible_is_reported(cfg):
    with pytest.raises(InfeasibleError, match="likely infeasible"):
        solve_l1_linf([[1.0], [1.0]], [1.0, -1.0], 0.5, cfg)


def test_homotopy_raises_path_infeasible():
    with pytest.raises(PathInfeasible) as exc:
        homotopy_solve(np.array([[1.0], [1.0]]), np.array([1.0, -1.0]), 0.5)
    assert exc.value.lam_min > 0.5


def test_rank_deficient_rows_infeasible_at_zero_lambda():
    # Two identical rows with different targets cannot both be met exactly.
    A = np.array([[1.0, 2.0], [1.0, 2.0]])
    for cfg in (ADMM, EXACT):
        with pytest.raises(InfeasibleError):
            solve_l1_linf(A, [1.0, 0.0], 0.1, cfg)


# ---------------------------------------------------------------- oracle agreement

@METHODS
def test_random_instances_match_highs(cfg, rng):
    checked = 0
    for _ in range(60):
        A, b, lam = _instance(rng)
        _, ref = l1_linf_linprog(A, b, lam)
        if np.isnan(ref):
            with pytest.raises(InfeasibleError):
                solve_l1_linf(A, b, lam, cfg)
            continue
        rep = solve_l1_linf(A, b, lam, cfg)
        assert rep.converged
        assert abs(rep.objective - ref) <= 1e-6 * (1 + ref)
        assert np.abs(A @ rep.solution - b).max() <= lam + 1e-6
        checked += 1
    assert checked > 20


def test_homotopy_certificate(rng):
    for _ in range(100):
        A, b, lam = _instance(rng)
        try:
            res = homotopy_solve(A, b, lam)
        except PathInfeasible:
            assert np.isnan(l1_linf_linprog(A, b, lam)[1])
            continue
        assert res.ok
        primal, dual, gap = certify(A, b, lam, res.x, res.y)
        scale = 1 + np.abs(b).max()
        assert primal <= 1e-10 * scale and dual <= 1e-10 and abs(gap) <= 1e-9 * scale


def test_homotopy_and_admm_agree_on_clime_columns(rng):
    p = 30
    L = rng.standard_normal((p, p)) / np.sqrt(p)
    S = L @ L.T + 0.5 * np.eye(p)
    E = np.eye(p)[:, :5]
    a = L1LinfSolver(S, ADMM).solve_many(E, 0.05)
    h = L1LinfSolver(S, EXACT).solve_many(E, 0.05)
    for ra, rh in zip(a, h):
        assert abs(ra.objective - rh.objective) <= 1e-6 * (1 + rh.objective)
        assert rh.violation <= 1e-10


# ---------------------------------------------------------------- report contract

@METHODS
def test_report_contract(cfg, rng):
    A, b, lam = _instance(rng, 5, 5)
    A = A + 3 * np.eye(5)
    rep = solve_l1_linf(A, b, lam, cfg)
    assert rep.objective == pytest.approx(np.abs(rep.solution).sum(), rel=1e-15, abs=0)
    if rep.converged:
        assert rep.primal_residual <= rep.primal_threshold
        assert rep.dual_residual <= rep.dual_threshold


def test_warm_start_accepted(rng):
    A, b, lam = _instance(rng, 6, 6)
    A = A + 3 * np.eye(6)
    cold = solve_l1_linf(A, b, lam)
    warm = solve_l1_linf(A, b, lam, x0=cold.solution)
    assert warm.converged
    assert abs(warm.objective - cold.objective) <= 1e-6 * (1 + cold.objective)


def test_iteration_budget_reported_not_raised(rng):
    A, b, _ = _instance(rng, 6, 6)
    rep = solve_l1_linf(A + 3 * np.eye(6), b, 0.01, SolverConfig(max_iters=2, polish=False))
    assert rep.iterations <= 2
    assert isinstance(rep.converged, bool)


# ---------------------------------------------------------------- properties

@st.composite
def problems(draw):
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    k, m = draw(st.integers(1, 6)), draw(st.integers(1, 6))
    A = rng.standard_normal((k, m))
    if k <= m:
        A[:, :k] += 2 * np.eye(k)  # full row rank keeps every lambda feasible
    else:
        b = A @ rng.standard_normal(m)
        return A, b
    return A, rng.standard_normal(k)


@given(problems(), st.floats(0.0, 1.0))
def test_feasibility_of_returned_point(prob, frac):
    A, b = prob
    lam = frac * np.abs(b).max()
    for cfg in (ADMM, EXACT):
        rep = solve_l1_linf(A, b, lam, cfg)
        if rep.converged:
            assert np.abs(A @ rep.solution - b).max() <= lam + 10 * cfg.tol_primal * (1 + np.abs(b).max())


@given(problems(), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_objective_monotone_in_lambda(prob, f1, f2):
    A, b = prob
    bmax = np.abs(b).max()
    l1, l2 = sorted((f1 * bmax, f2 * bmax))
    o1 = solve_l1_linf(A, b, l1, EXACT).objective
    o2 = solve_l1_linf(A, b, l2, EXACT).objective
    assert o2 <= o1 + 1e-9 * (1 + o1)


@given(problems(), st.floats(0.05, 0.9), st.floats(0.01, 100.0))
def test_scaling_covariance(prob, frac, c):
    A, b = prob
    lam = frac * np.abs(b).max()
    base = solve_l1_linf(A, b, lam, EXACT).objective
    scaled = solve_l1_linf(c * A, c * b, c * lam, EXACT).objective
    assert abs(base - scaled) <= 1e-8 * (1 + base)
    admm = solve_l1_linf(c * A, c * b, c * lam, ADMM)
    if admm.converged:
        assert abs(base - admm.objective) <= 1e-6 * (1 + base)


@given(problems(), st.floats(0.05, 0.9))
def test_homotopy_matches_lp_oracle(prob, frac):
    A, b = prob
    lam = frac * np.abs(b).max()
    ref = np.abs(lp_oracle(A, b, lam)).sum()
    assert abs(solve_l1_linf(A, b, lam, EXACT).objective - ref) <= 1e-9 * (1 + ref)
