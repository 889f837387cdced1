"""Observed-data likelihoods and KL divergences for lower-bound constructions.

A hypothesis is a Gaussian design ``x ~ N(0, sigma)``, a response
``y = x.beta + N(0, sigma_eps^2)`` and a uniform observation rate ``rho``.
Integrating out the unobserved coordinates leaves ``x_obs`` Gaussian and
``y | x_obs`` Gaussian with mean ``x_obs . (beta_obs + S11^{-1} S12 beta_mis)``
and variance ``sigma_eps^2 + beta_mis^T S22.1 beta_mis`` (Schur complement).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

_LOG2PI = math.log(2 * math.pi)


@dataclass(frozen=True)
class Hypothesis:
    beta: NDArray[np.float64]
    sigma: NDArray[np.float64]
    sigma_eps: float
    rho: float

    def __post_init__(self) -> None:
        beta = np.array(self.beta, dtype=float)
        sigma = np.array(self.sigma, dtype=float)
        p = beta.shape[0]
        if beta.ndim != 1 or sigma.shape != (p, p):
            raise ValueError("beta must be length p and sigma p x p")
        if not np.array_equal(sigma, sigma.T):
            raise ValueError("sigma must be symmetric")
        try:
            np.linalg.cholesky(sigma)
        except np.linalg.LinAlgError as exc:
            raise ValueError("sigma must be positive definite") from exc
        if not self.sigma_eps > 0:
            raise ValueError("sigma_eps must be positive")
        if not 0 <= self.rho <= 1:
            raise ValueError("rho must lie in [0, 1]")
        beta.setflags(write=False)
        sigma.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "sigma", sigma)

    @property
    def p(self) -> int:
        return self.beta.shape[0]


@dataclass(frozen=True)
class _Conditional:
    chol: NDArray | None  # Cholesky factor of S11
    logdet: float
    coef: NDArray  # E[y | x_obs] = coef . x_obs
    var: float  # Var[y | x_obs]


def _conditional(h: Hypothesis, obs: NDArray[np.bool_]) -> _Conditional:
    o = np.flatnonzero(obs)
    m = np.flatnonzero(~obs)
    b_o, b_m = h.beta[o], h.beta[m]
    if o.size == 0:
        return _Conditional(None, 0.0, np.zeros(0), h.sigma_eps**2 + b_m @ h.sigma @ b_m)
    S11 = h.sigma[np.ix_(o, o)]
    try:
        L = np.linalg.cholesky(S11)
    except np.linalg.LinAlgError as exc:
        raise ValueError("observed block of sigma is numerically singular") from exc
    S12 = h.sigma[np.ix_(o, m)]
    S22 = h.sigma[np.ix_(m, m)]
    # K = S11^{-1} S12 via the triangular factor.
    K = np.linalg.solve(L.T, np.linalg.solve(L, S12))
    schur = S22 - S12.T @ K
    coef = b_o + K @ b_m
    var = h.sigma_eps**2 + b_m @ schur @ b_m
    return _Conditional(L, 2.0 * float(np.log(np.diag(L)).sum()), coef, float(var))


def _mask_logprob(rho: float, q: int, p: int) -> float:
    if (q and rho == 0.0) or (p - q and rho == 1.0):
        return -math.inf
    lo = q * math.log(rho) if q else 0.0
    lm = (p - q) * math.log1p(-rho) if p - q else 0.0
    return lo + lm


def _loglik_batch(c: _Conditional, y: NDArray, Xo: NDArray) -> NDArray:
    """Log density of (x_obs, y) for rows of ``Xo`` sharing one mask."""
    q = Xo.shape[1]
    out = -0.5 * (_LOG2PI + math.log(c.var)) - 0.5 * (y - Xo @ c.coef) ** 2 / c.var
    if q:
        z = np.linalg.solve(c.chol, Xo.T)
        out = out - 0.5 * (q * _LOG2PI + c.logdet) - 0.5 * (z**2).sum(axis=0)
    return out


def observed_loglik(y: float, x: ArrayLike, mask: ArrayLike, h: Hypothesis,
                    include_mask: bool = True) -> float:
    """Log density of ``(mask, x_obs, y)``; unobserved entries of ``x`` are ignored."""
    x = np.asarray(x, dtype=float)
    obs = np.asarray(mask).astype(bool)
    if x.shape != (h.p,) or obs.shape != (h.p,):
        raise ValueError(f"x and mask must have length {h.p}")
    c = _conditional(h, obs)
    val = float(_loglik_batch(c, np.array([float(y)]), x[obs][None, :])[0])
    if include_mask:
        val += _mask_logprob(h.rho, int(obs.sum()), h.p)
    return val


# --------------------------------------------------------------------------
# KL divergences
# --------------------------------------------------------------------------

def _masks(p: int):
    for bits in itertools.product((False, True), repeat=p):
        yield np.array(bits, dtype=bool)


def kl_identity_covariance(beta0: ArrayLike, beta1: ArrayLike, sigma_eps: float,
                           rho: float) -> float:
    """Exact ``KL(P_beta0 || P_beta1)`` when both designs are ``N(0, I)``.

    Per mask, ``y | x_obs`` is ``N(x_obs.beta_obs, sigma_eps^2 + |beta_mis|^2)``,
    so the divergence is a Gaussian one averaged over masks:
    ``E[ log(v1/v0)/2 + (v0 + |beta0_obs - beta1_obs|^2) / (2 v1) - 1/2 ]``.
    """
    b0 = np.asarray(beta0, dtype=float)
    b1 = np.asarray(beta1, dtype=float)
    return _kl_identity(b0, b1, sigma_eps, rho, bound=False)


def kl_identity_covariance_bound(beta0: ArrayLike, beta1: ArrayLike, sigma_eps: float,
                                 rho: float) -> float:
    """Upper bound obtained from ``log x <= x - 1``:
    ``E[ (v1 - v0)^2 / (2 v0 v1) + |beta0_obs - beta1_obs|^2 / (2 v1) ]``."""
    b0 = np.asarray(beta0, dtype=float)
    b1 = np.asarray(beta1, dtype=float)
    return _kl_identity(b0, b1, sigma_eps, rho, bound=True)


def _kl_identity(b0, b1, sigma_eps, rho, bound) -> float:
    p = b0.shape[0]
    if b1.shape != (p,):
        raise ValueError("beta0 and beta1 must have the same length")
    if p > 20:
        raise ValueError("exact enumeration is limited to p <= 20; use kl_montecarlo")
    if not sigma_eps > 0 or not 0 <= rho <= 1:
        raise ValueError("need sigma_eps > 0 and rho in [0, 1]")
    s2 = sigma_eps**2
    total = 0.0
    # Chunked enumeration of all 2^p masks as bit patterns.
    codes_all = np.arange(2**p, dtype=np.int64)
    shifts = np.arange(p, dtype=np.int64)
    for start in range(0, codes_all.size, 1 << 16):
        codes = codes_all[start:start + (1 << 16)]
        obs = ((codes[:, None] >> shifts) & 1).astype(bool)
        q = obs.sum(axis=1)
        w = rho**q * (1.0 - rho) ** (p - q)
        v0 = s2 + (~obs * b0**2).sum(axis=1)
        v1 = s2 + (~obs * b1**2).sum(axis=1)
        d2 = (obs * (b0 - b1) ** 2).sum(axis=1)
        if bound:
            term = 0.5 * (v1 - v0) ** 2 / (v0 * v1) + 0.5 * d2 / v1
        else:
            term = 0.5 * np.log(v1 / v0) + 0.5 * (v0 + d2) / v1 - 0.5
        total += float((w * term).sum())
    return total


def _joint_cov(h: Hypothesis, obs: NDArray[np.bool_]) -> NDArray:
    o = np.flatnonzero(obs)
    Sb = h.sigma @ h.beta
    q = o.size
    C = np.empty((q + 1, q + 1))
    C[:q, :q] = h.sigma[np.ix_(o, o)]
    C[:q, q] = C[q, :q] = Sb[o]
    C[q, q] = h.beta @ Sb + h.sigma_eps**2
    return C


def _gauss_kl(C0: NDArray, C1: NDArray) -> float:
    L0 = np.linalg.cholesky(C0)
    L1 = np.linalg.cholesky(C1)
    A = np.linalg.solve(L1, L0)
    return 0.5 * (float((A**2).sum()) - C0.shape[0]
                  + 2.0 * float(np.log(np.diag(L1)).sum() - np.log(np.diag(L0)).sum()))


def kl_exact(h0: Hypothesis, h1: Hypothesis) -> float:
    """Exact KL between the observed-data laws, by enumerating all masks.

    Both hypotheses must share ``rho``; for a fixed mask ``(x_obs, y)`` is a
    zero-mean Gaussian, so each term is a Gaussian KL. Limited to ``p <= 16``.
    """
    if h0.p != h1.p:
        raise ValueError("hypotheses must have the same dimension")
    if h0.rho != h1.rho:
        raise ValueError("hypotheses must share the observation rate")
    p, rho = h0.p, h0.rho
    if p > 16:
        raise ValueError("exact enumeration is limited to p <= 16; use kl_montecarlo")
    total = 0.0
    for obs in _masks(p):
        q = int(obs.sum())
        w = rho**q * (1.0 - rho) ** (p - q)
        if w == 0.0:
            continue
        total += w * _gauss_kl(_joint_cov(h0, obs), _joint_cov(h1, obs))
    return total


def sample_observations(h: Hypothesis, size: int, rng: np.random.Generator):
    """Draw ``(X, y, mask)`` from ``h``; ``X`` holds the full covariates."""
    L = np.linalg.cholesky(h.sigma)
    X = rng.standard_normal((size, h.p)) @ L.T
    y = X @ h.beta + h.sigma_eps * rng.standard_normal(size)
    mask = rng.random((size, h.p)) < h.rho
    return X, y, mask


def _logliks_grouped(hs, X, y, mask) -> list[NDArray]:
    """Observed-data log densities of each draw under every hypothesis in ``hs``."""
    p = X.shape[1]
    codes = mask.astype(np.int64) @ (1 << np.arange(p, dtype=np.int64))
    out = [np.empty(len(y)) for _ in hs]
    for code in np.unique(codes):
        rows = np.flatnonzero(codes == code)
        obs = mask[rows[0]]
        Xo = X[np.ix_(rows, np.flatnonzero(obs))]
        for k, h in enumerate(hs):
            c = _conditional(h, obs)
            out[k][rows] = _loglik_batch(c, y[rows], Xo) + _mask_logprob(h.rho, int(obs.sum()), p)
    return out


def kl_montecarlo(h0: Hypothesis, h1: Hypothesis, samples: int, seed: int = 0) -> tuple[float, float]:
    """Monte-Carlo ``KL(h0 || h1)`` with its standard error."""
    if samples < 1000:
        raise ValueError("need at least 1000 samples")
    if h0.p != h1.p or h0.rho != h1.rho:
        raise ValueError("hypotheses must share dimension and observation rate")
    rng = np.random.default_rng(seed)
    X, y, mask = sample_observations(h0, samples, rng)
    l0, l1 = _logliks_grouped((h0, h1), X, y, mask)
    r = l0 - l1
    bad = np.flatnonzero(~np.isfinite(r))
    if bad.size:
        i = int(bad[0])
        raise ValueError(f"non-finite log-ratio at draw {i} (mask {mask[i].astype(int).tolist()})")
    return float(r.mean()), float(r.std(ddof=1) / math.sqrt(samples))


# --------------------------------------------------------------------------
# Constructions
# --------------------------------------------------------------------------

def theorem2_hypotheses(p: int, s: int, M: float, delta: float, size: int = 32,
                        seed: int = 0, max_tries: int = 20000) -> list[NDArray[np.float64]]:
    """Packing of ``s``-sparse vectors of norm ``M``.

    Each member has ``s/2`` leading entries ``a = sqrt(2 M^2 / s - delta^2)``
    followed by a tail with exactly ``s/2`` entries ``+-delta``. Tail sign
    patterns are accepted greedily (seeded random candidates) when their
    Hamming distance to every accepted pattern is at least ``s/2``.
    """
    if p % 2 or s % 2 or s < 2:
        raise ValueError("p and s must be even, s >= 2")
    if not s < 4 * p / 5:
        raise ValueError("need s < 4p/5")
    if not (delta > 0 and delta**2 < 2 * M**2 / s):
        raise ValueError("infeasible delta: need 0 < delta^2 < 2 M^2 / s")
    half = s // 2
    tail = p - half
    a = math.sqrt(2 * M**2 / s - delta**2)
    rng = np.random.default_rng(seed)
    accepted: list[NDArray] = []
    for _ in range(max_tries):
        if len(accepted) >= size:
            break
        z = np.zeros(tail, dtype=np.int8)
        z[rng.choice(tail, half, replace=False)] = rng.choice(np.array([-1, 1], dtype=np.int8), half)
        if all(int((z != w).sum()) >= half for w in accepted):
            accepted.append(z)
    out = []
    for z in accepted:
        beta = np.concatenate([np.full(half, a), delta * z.astype(float)])
        out.append(beta)
    _verify_packing(out, s, M, delta)
    return out


def _verify_packing(betas, s, M, delta) -> None:
    half = s // 2
    for b in betas:
        if np.count_nonzero(b) != s or abs(np.linalg.norm(b) - M) > 1e-12 * max(1.0, M):
            raise AssertionError("packing member violates the construction")
    for b, c in itertools.combinations(betas, 2):
        if int((np.sign(b[half:]) != np.sign(c[half:])).sum()) < half:
            raise AssertionError("packing members too close")


def theorem3_pair(p: int, s: int, M: float, gamma: float, j: int,
                  sigma_eps: float = 1.0, rho: float = 0.5) -> tuple[Hypothesis, Hypothesis]:
    """Two hypotheses differing only through coordinate ``j`` and its link to the anchor.

    The anchor is coordinate ``s - 2`` (0-based). Coefficients: ``s - 2``
    entries ``a / sqrt(s - 2)``, the anchor ``a``, and ``+-a gamma`` at ``j``,
    with ``a = sqrt(M^2 / (2 + gamma^2))``. Covariances are
    ``I -+ gamma (e_anchor e_j^T + e_j e_anchor^T)``.
    """
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    if s < 4:
        raise ValueError("need s >= 4")
    anchor = s - 2
    if not anchor < j < p:
        raise ValueError(f"need {anchor} < j < {p}")
    a = math.sqrt(M**2 / (2 + gamma**2))
    b0 = np.zeros(p)
    b0[: s - 2] = a / math.sqrt(s - 2)
    b0[anchor] = a
    b1 = b0.copy()
    b0[j] = a * gamma
    b1[j] = -a * gamma
    E = np.zeros((p, p))
    E[anchor, j] = E[j, anchor] = 1.0
    h0 = Hypothesis(b0, np.eye(p) - gamma * E, sigma_eps, rho)
    h1 = Hypothesis(b1, np.eye(p) + gamma * E, sigma_eps, rho)
    return h0, h1


def theorem3_kl_closed_form(h0: Hypothesis, s: int, gamma: float, j: int) -> float:
    """``rho^2 [2 g^2/(1-g^2) + E(2 a^2 g^2 / (sigma_eps^2 + |beta_mis|^2) | anchor, j observed)]``.

    The conditional expectation runs over the remaining coordinates' masks;
    with both linked coordinates observed, only the first ``s - 2`` entries
    can be missing.
    """
    rho = h0.rho
    a2 = h0.beta[s - 2] ** 2
    head = h0.beta[: s - 2]
    g2 = gamma**2
    expect = 0.0
    for bits in itertools.product((False, True), repeat=s - 2):
        obs = np.array(bits, dtype=bool)
        q = int(obs.sum())
        w = rho**q * (1.0 - rho) ** (s - 2 - q)
        v =h0.sigma_eps**2 + float((head[~obs] ** 2).sum())
        expect += w * 2 * a2 * g2 / v
    return rho**2 * (2 * g2 / (1 - g2) + expect)


@dataclass(frozen=True)
class EquivalenceReport:
    trials: int
    violations: int
    max_discrepancy: float  # over draws where the linked pair is not both observed
    both_observed: int
    both_observed_fraction: float
    expected_fraction: float
    stderr: float
    counterexample: tuple[int, ...] | None

    @property
    def passed(self) -> bool:
        return self.violations == 0


def check_likelihood_equivalence(pair: tuple[Hypothesis, Hypothesis], anchor: int, j: int,
                                 trials: int = 10000, seed: int = 0,
                                 tol: float = 1e-9) -> EquivalenceReport:
    """Compare observed-data log densities of the two hypotheses draw by draw.

    Whenever coordinates ``anchor`` and ``j`` are not both observed the
    densities must agree to ``tol``.
    """
    h0, h1 = pair
    rng = np.random.default_rng(seed)
    X, y, mask = sample_observations(h0, trials, rng)
    l0, l1 = _logliks_grouped((h0, h1), X, y, mask)
    both = mask[:, anchor] & mask[:, j]
    diff = np.abs(l0 - l1)
    other = ~both
    viol = other & ~(diff <= tol)
    max_disc = float(diff[other].max(initial=0.0))
    counter = None
    if viol.any():
        counter = tuple(int(v) for v in mask[int(np.flatnonzero(viol)[0])])
    nb = int(both.sum())
    rho2 = h0.rho**2
    return EquivalenceReport(
        trials=trials,
        violations=int(viol.sum()),
        max_discrepancy=max_disc,
        both_observed=nb,
        both_observed_fraction=nb / trials,
        expected_fraction=rho2,
        stderr=math.sqrt(rho2 * (1 - rho2) / trials),
        counterexample=counter,
    )
