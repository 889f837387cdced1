"""Dantzig-type regression on surrogate moments.

Both estimators solve ``minimize ||beta||_1  s.t.  ||cross - sigma beta||_inf <= lam``;
they differ only in ``sigma``: the surrogate covariance of the incomplete
design (unknown population covariance) or a supplied population covariance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Literal, Union

import numpy as np
from numpy.typing import NDArray

from .design import MomentKind, NoiseSpec, SurrogateMoments
from .solver import InfeasibleError, SolveReport, SolverConfig, solve_l1_linf

AUTO = "auto"
LambdaSpec = Union[float, Literal["auto"]]


@dataclass(frozen=True)
class DantzigConfig:
    """Tuning for :func:`fit` / :func:`fit_auto`.

    ``lam`` is a positive number or ``"auto"``. With ``"auto"`` the rate
    formula of :func:`auto_lambda` is used, scaled by ``auto_constant``.
    ``rate`` selects the shared formula (same rate for both moment kinds) or
    the kind-dependent one, whose missing-data factor for the surrogate
    covariance is ``1/rho_*`` on the signal term instead of ``1/sqrt(rho_*)``.
    """

    lam: LambdaSpec = AUTO
    auto_constant: float = 1.0
    beta_norm_guess: float | None = None
    rate: Literal["shared", "by-kind"] = "shared"
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self) -> None:
        if self.lam != AUTO and not (isinstance(self.lam, (int, float)) and self.lam > 0):
            raise ValueError("lambda must be positive or 'auto'")
        if not self.auto_constant > 0:
            raise ValueError("auto_constant must be positive")
        if self.beta_norm_guess is not None and not self.beta_norm_guess >= 0:
            raise ValueError("beta_norm_guess must be >= 0")
        if self.rate not in ("shared", "by-kind"):
            raise ValueError("rate must be 'shared' or 'by-kind'")


@dataclass(frozen=True)
class RegressionFit:
    beta: NDArray[np.float64]
    lambda_used: float
    kind: MomentKind
    report: SolveReport
    meta: dict = field(default_factory=dict, compare=False)

    def constraint_gap(self, moments: SurrogateMoments) -> float:
        """``||cross - sigma beta||_inf - lambda_used`` (<= 0 when feasible)."""
        r = moments.cross - moments.sigma @ self.beta
        return float(np.abs(r).max(initial=0.0) - self.lambda_used)


def _log_p(p: int) -> float:
    return math.log(p) if p > 1 else math.log(2.0)


def auto_lambda(
    n: int,
    p: int,
    rho_star: float,
    noise: NoiseSpec,
    beta_norm: float,
    kind: MomentKind = MomentKind.SURROGATE_UNKNOWN,
    constant: float = 1.0,
    rate: Literal["shared", "by-kind"] = "shared",
) -> float:
    """Rate-form tuning parameter.

    shared:  ``C (sx^2 |b| + sx se) sqrt(log p / (rho n))``
    by-kind: surrogate covariance uses ``C sx sqrt(log p / n) (sx |b| / rho + se / sqrt(rho))``;
             the population covariance uses the shared form.
    ``log 2`` stands in for ``log p`` when ``p = 1``.
    """
    if n < 1 or p < 1:
        raise ValueError("n and p must be >= 1")
    if not 0 < rho_star <= 1:
        raise ValueError("rho_star must lie in (0, 1]")
    if noise.sigma_x is None:
        raise ValueError("automatic lambda needs noise.sigma_x")
    if not beta_norm >= 0:
        raise ValueError("beta_norm must be >= 0")
    sx, se = noise.sigma_x, noise.sigma_eps
    lp = _log_p(p)
    if rate == "by-kind" and kind is MomentKind.SURROGATE_UNKNOWN:
        return constant * sx * math.sqrt(lp / n) * (sx * beta_norm / rho_star + se / math.sqrt(rho_star))
    return constant * (sx * sx * beta_norm + sx * se) * math.sqrt(lp / (rho_star * n))


def _solve(moments: SurrogateMoments, lam: float, cfg: DantzigConfig, x0=None) -> SolveReport:
    try:
        return solve_l1_linf(moments.sigma, moments.cross, lam, cfg.solver, x0)
    except InfeasibleError as exc:
        raise InfeasibleError(
            f"likely infeasible: increase lambda (lambda={lam:.6g})", column=exc.column
        ) from exc


def _lambda_for(moments: SurrogateMoments, noise: NoiseSpec, cfg: DantzigConfig,
                beta_norm: float) -> float:
    return auto_lambda(moments.n, moments.p, moments.rho_star, noise, beta_norm,
                       moments.kind, cfg.auto_constant, cfg.rate)


def _check_positive(lam: float) -> None:
    if not lam > 0:
        raise ValueError("automatic lambda is zero: set sigma_eps > 0 or give lambda explicitly")


def stage1_beta_norm(moments: SurrogateMoments) -> float:
    """Crude scale ``||cross||_2 / sqrt(trace(sigma) / p)`` for the first stage."""
    tr = float(np.trace(moments.sigma)) / moments.p
    if tr <= 0:
        return 0.0
    return float(np.linalg.norm(moments.cross) / math.sqrt(tr))


def fit(moments: SurrogateMoments, noise: NoiseSpec, cfg: DantzigConfig | None = None) -> RegressionFit:
    """Single solve. With ``lam="auto"`` the norm of ``beta`` in the rate is
    ``cfg.beta_norm_guess`` or, if unset, the stage-one scale."""
    cfg = cfg or DantzigConfig()
    if cfg.lam == AUTO:
        bn = cfg.beta_norm_guess if cfg.beta_norm_guess is not None else stage1_beta_norm(moments)
        lam = _lambda_for(moments, noise, cfg, bn)
        meta = {"beta_norm": bn, "lambda_source": "auto"}
    else:
        lam = float(cfg.lam)
        meta = {"lambda_source": "explicit"}
    _check_positive(lam)
    rep = _solve(moments, lam, cfg)
    return RegressionFit(rep.solution, lam, moments.kind, rep, meta)


def fit_auto(moments: SurrogateMoments, noise: NoiseSpec, cfg: DantzigConfig | None = None) -> RegressionFit:
    """Two-stage plug-in for the unknown ``||beta||_2`` in the rate formula.

    Stage one uses ``cfg.beta_norm_guess`` (default: the stage-one scale);
    stage two refits with the norm of the stage-one estimate. Both lambdas
    are recorded in ``meta``.
    """
    cfg = cfg or DantzigConfig()
    if cfg.lam != AUTO:
        return fit(moments, noise, cfg)
    first = fit(moments, noise, cfg)
    bn2 = float(np.linalg.norm(first.beta))
    lam2 = _lambda_for(moments, noise, cfg, bn2)
    _check_positive(lam2)
    rep = _solve(moments, lam2, cfg, x0=first.beta)
    meta = {
        "lambda_source": "auto-two-stage",
        "stage1_lambda": first.lambda_used,
        "stage1_beta_norm": first.meta["beta_norm"],
        "stage2_beta_norm": bn2,
    }
    return RegressionFit(rep.solution, lam2, moments.kind, rep, meta)


def with_lambda(cfg: DantzigConfig, lam: LambdaSpec) -> DantzigConfig:
    return replace(cfg, lam=lam)
