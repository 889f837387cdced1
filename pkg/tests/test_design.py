from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from missreg import (
    IncompleteDesign,
    MomentKind,
    NoiseSpec,
    from_raw,
    known_moments,
    scaled_design,
    surrogate_covariance,
    surrogate_cross,
    surrogate_moments,
)
from missreg.design import sample_covariance

from oracles import surrogate_covariance_loops

NA = math.nan


# ---------------------------------------------------------------- from_raw

def test_fully_observed_has_unit_rates():
    d = from_raw([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(d.mask, np.ones((2, 2)))
    assert np.array_equal(d.rates, [1.0, 1.0])


def test_zero_imputation_with_supplied_rates():
    d = from_raw([[1.0, NA], [NA, 2.0]], rates=[0.5, 0.5])
    assert np.array_equal(d.values, [[1.0, 0.0], [0.0, 2.0]])
    assert np.array_equal(d.mask, [[1, 0], [0, 1]])
    assert not d.rates_estimated


def test_rates_estimated_from_observed_fraction():
    d = from_raw([[1.0, NA], [3.0, 2.0]])
    assert np.array_equal(d.rates, [1.0, 0.5])
    assert d.rates_estimated


def test_estimated_rate_floor():
    # A rate estimate can never fall below 1 / (2n).
    d = from_raw([[1.0], [NA], [NA], [NA]])
    assert d.rates[0] == 0.25
    assert d.rates[0] >= 1 / 8


def test_never_observed_column_without_rates_is_an_error():
    with pytest.raises(ValueError, match="column never observed"):
        from_raw([[1.0, NA], [2.0, NA]])


def test_never_observed_column_with_rates_is_allowed():
    d = from_raw([[1.0, NA], [2.0, NA]], rates=[1.0, 0.3])
    assert d.mask[:, 1].sum() == 0


def test_non_finite_observed_value_is_an_error():
    with pytest.raises(ValueError, match="finite"):
        from_raw([[1.0, math.inf]])


@pytest.mark.parametrize("rates", [[0.0, 1.0], [1.2, 0.5], [-0.1, 0.5]])
def test_rates_outside_unit_interval_rejected(rates):
    with pytest.raises(ValueError):
        from_raw([[1.0, 2.0]], rates=rates)


def test_design_invariants_enforced():
    with pytest.raises(ValueError, match="0 or 1"):
        IncompleteDesign(np.zeros((2, 2)), np.full((2, 2), 2), np.ones(2))
    with pytest.raises(ValueError, match="hold 0"):
        IncompleteDesign(np.ones((2, 2)), np.zeros((2, 2)), np.ones(2))


def test_design_is_immutable():
    d = from_raw([[1.0, 2.0]])
    with pytest.raises(ValueError):
        d.values[0, 0] = 5.0


def test_rho_star_is_min_rate():
    d = from_raw([[1.0, 2.0, 3.0]], rates=[0.9, 0.4, 0.7])
    assert d.rho_star() == 0.4


# ---------------------------------------------------------------- scaled design

def test_scaled_design_unit_rates_is_identity():
    X = np.arange(6.0).reshape(3, 2)
    assert np.array_equal(scaled_design(from_raw(X)), X)


def test_scaled_design_single_row():
    d = from_raw([[2.0, NA]], rates=[0.5, 0.5])
    assert np.array_equal(scaled_design(d), [[4.0, 0.0]])


def test_scaled_design_zero_matrix():
    d = from_raw(np.zeros((3, 2)))
    assert np.array_equal(scaled_design(d), np.zeros((3, 2)))


# ---------------------------------------------------------------- surrogate covariance

def test_surrogate_covariance_unit_rates_is_sample_covariance(rng):
    X = rng.standard_normal((7, 4))
    S = surrogate_covariance(from_raw(X))
    assert np.allclose(S, X.T @ X / 7, rtol=1e-14, atol=1e-14)


def test_surrogate_covariance_hand_example():
    # Scaled row (2, 0): Xt'Xt = [[4, 0], [0, 0]], diagonal halved.
    d = from_raw([[1.0, NA]], rates=[0.5, 0.5])
    assert np.array_equal(scaled_design(d), [[2.0, 0.0]])
    assert np.array_equal(surrogate_covariance(d), [[2.0, 0.0], [0.0, 0.0]])


def test_surrogate_covariance_matches_loop_oracle(rng):
    for _ in range(20):
        n, p = rng.integers(1, 8), rng.integers(1, 6)
        X = rng.standard_normal((n, p))
        rates = rng.uniform(0.2, 1.0, p)
        mask = rng.random((n, p)) < rates
        d = IncompleteDesign.from_full(X, mask, rates)
        ref = surrogate_covariance_loops(np.asarray(d.values), rates)
        assert np.allclose(surrogate_covariance(d), ref, rtol=1e-12, atol=1e-12)


def test_surrogate_covariance_unbiased_small_mc(rng):
    # Monte-Carlo check of E[S | X] = X'X/n at a modest draw count; the
    # 10^5-draw version lives in the acceptance suite.
    X = rng.standard_normal((4, 3))
    rates = np.array([0.6, 0.8, 0.5])
    K = 20000
    sums = np.zeros((3, 3))
    sq = np.zeros((3, 3))
    for _ in range(K):
        S = surrogate_covariance(IncompleteDesign.from_full(X, rng.random(X.shape) < rates, rates))
        sums += S
        sq += S * S
    mean = sums / K
    se = np.sqrt((sq / K - mean**2) / K)
    assert np.all(np.abs(mean - X.T @ X / 4) <= 4 * se + 1e-12)


def test_surrogate_covariance_may_be_indefinite():
    # Off-diagonals are inflated by 1/rho^2, the diagonal only by 1/rho.
    d = IncompleteDesign.from_full([[1.0, 1.0]], [[1, 1]], [0.5, 0.5])
    assert np.array_equal(surrogate_covariance(d), [[2.0, 4.0], [4.0, 2.0]])
    assert np.linalg.eigvalsh(surrogate_covariance(d)).min() < 0


# ---------------------------------------------------------------- cross moment

def test_surrogate_cross_zero_response():
    d = from_raw([[1.0, 2.0], [3.0, NA]], rates=[1.0, 0.5])
    assert np.array_equal(surrogate_cross(d, np.zeros(2)), [0.0, 0.0])


def test_surrogate_cross_unit_rates_is_ordinary(rng):
    X = rng.standard_normal((5, 3))
    y = rng.standard_normal(5)
    assert np.allclose(surrogate_cross(from_raw(X), y), X.T @ y / 5, rtol=1e-14)


def test_surrogate_cross_hand_example():
    d = from_raw([[2.0, NA]], rates=[0.5, 0.5])
    assert np.array_equal(surrogate_cross(d, [3.0]), [12.0, 0.0])


def test_surrogate_cross_dimension_mismatch():
    d = from_raw([[1.0, 2.0]])
    with pytest.raises(ValueError):
        surrogate_cross(d, [1.0, 2.0])


# ---------------------------------------------------------------- moments bundle

def test_moment_kinds(rng):
    X = rng.standard_normal((6, 3))
    y = rng.standard_normal(6)
    d = from_raw(X)
    assert surrogate_moments(d, y).kind is MomentKind.SURROGATE_UNKNOWN
    m = known_moments(d, y, np.eye(3))
    assert m.kind is MomentKind.POPULATION_KNOWN
    assert np.array_equal(m.sigma, np.eye(3))


def test_noise_spec_validation():
    with pytest.raises(ValueError):
        NoiseSpec(-1.0)
    with pytest.raises(ValueError):
        NoiseSpec(0.1, -1.0)


# ---------------------------------------------------------------- properties

@st.composite
def designs(draw):
    n = draw(st.integers(1, 8))
    p = draw(st.integers(1, 5))
    X = draw(arrays(np.float64, (n, p), elements=st.floats(-10, 10)))
    mask = draw(arrays(np.bool_, (n, p)))
    rates = draw(arrays(np.float64, p, elements=st.floats(0.05, 1.0)))
    return IncompleteDesign.from_full(X, mask, rates)


@given(designs())
def test_surrogate_covariance_exactly_symmetric(d):
    S = surrogate_covariance(d)
    assert np.array_equal(S, S.T)


@given(designs())
def test_surrogate_diagonal_nonnegative(d):
    assert np.all(np.diag(surrogate_covariance(d)) >= 0)


@given(designs())
def test_surrogate_diagonal_formula(d):
    Xt = scaled_design(d)
    expected = d.rates * (Xt**2).sum(axis=0) / d.n
    assert np.allclose(np.diag(surrogate_covariance(d)), expected, rtol=1e-12, atol=0)


@given(designs(), st.integers(0, 2**32 - 1))
def test_surrogates_deterministic(d, seed):
    y = np.random.default_rng(seed).standard_normal(d.n)
    assert np.array_equal(surrogate_covariance(d), surrogate_covariance(d))
    assert np.array_equal(surrogate_cross(d, y), surrogate_cross(d, y))


@given(arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 5)), elements=st.floats(-10, 10)))
def test_unit_rates_reduce_bitwise_to_sample_covariance(X):
    assert np.array_equal(surrogate_covariance(from_raw(X)), sample_covariance(X))
