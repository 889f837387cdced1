"""De-biased estimates, their limiting variance and coordinate-wise intervals.

With ``M`` the rows of the approximate inverse, the de-biased estimate is
``beta + M (cross - sigma beta)`` and its variance is the sandwich
``M Gamma M^T / n`` where ``Gamma`` collects the noise term
``sigma_eps^2 Xt^T Xt / n`` and a missing-data term ``Upsilon`` driven by the
squared coefficients.

``Upsilon`` is a triple sum over (row, j, k, t). With ``a[i, t] =
(1 - rates[t]) Xt[i, t]^2 beta[t]^2`` and ``w = a.sum(1)``, the sum over
``t != j, k`` equals ``w[i] - a[i, j] - a[i, k]`` (``- a[i, j]`` once when
``j == k``), which brings it down to a few weighted Gram products. The
variance of a single coordinate never needs the p x p matrix at all:
``m^T Upsilon m`` is a sum over rows of quantities built from ``Xt @ m``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .clime import ClimeConfig, PrecisionFit, fit_clime
from .dantzig import DantzigConfig, RegressionFit, fit_auto
from .design import (
    IncompleteDesign,
    MomentKind,
    NoiseSpec,
    SurrogateMoments,
    scaled_design,
    surrogate_moments,
)


class VarianceMode(enum.Enum):
    DATA_DRIVEN = "data-driven"
    ORACLE_TRUTH = "oracle-truth"


class StageError(RuntimeError):
    """A pipeline failure tagged with the stage that raised it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class VarianceEstimate:
    """``gamma`` is None when only the sandwich diagonal was computed."""

    gamma: NDArray[np.float64] | None
    mode: VarianceMode
    var_diag: NDArray[np.float64] | None = None
    coords: tuple[int, ...] = ()


@dataclass(frozen=True)
class InferenceResult:
    beta_debiased: NDArray[np.float64]  # NaN outside coords
    var_diag: NDArray[np.float64]
    intervals: NDArray[np.float64]  # shape (|coords|, 2)
    alpha: float
    coords: tuple[int, ...]
    n: int
    beta_pilot: NDArray[np.float64]
    lambda_used: float
    nu_used: float
    sigma_eps_used: float
    meta: dict = field(default_factory=dict, compare=False)

    def halfwidths(self) -> NDArray[np.float64]:
        return normal_quantile(1 - self.alpha / 2) * np.sqrt(self.var_diag / self.n)

    def studentized(self, beta_true: ArrayLike) -> NDArray[np.float64]:
        """``sqrt(n) (beta_u - beta) / sqrt(var)`` on ``coords``."""
        c = list(self.coords)
        b = np.asarray(beta_true, dtype=float)[c]
        return math.sqrt(self.n) * (self.beta_debiased[c] - b) / np.sqrt(self.var_diag)


# --------------------------------------------------------------------------
# Normal quantile
# --------------------------------------------------------------------------

_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_PLOW = 0.02425


def _acklam(q: float) -> float:
    if q < _PLOW:
        r = math.sqrt(-2 * math.log(q))
        return (((((_C[0] * r + _C[1]) * r + _C[2]) * r + _C[3]) * r + _C[4]) * r + _C[5]) / \
               ((((_D[0] * r + _D[1]) * r + _D[2]) * r + _D[3]) * r + 1)
    if q > 1 - _PLOW:
        return -_acklam(1 - q)
    u = q - 0.5
    r = u * u
    return (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * u / \
           (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1)


def normal_quantile(q: float) -> float:
    """Standard normal quantile: rational approximation plus one Halley step."""
    if not 0 < q < 1:
        raise ValueError("quantile level must lie in (0, 1)")
    if q > 0.5:
        # 1 - q is exact here; refining in the lower tail avoids cancellation.
        return -normal_quantile(1.0 - q)
    x = _acklam(q)
    # Halley refinement against the erfc-based CDF.
    e = 0.5 * math.erfc(-x / math.sqrt(2)) - q
    u = e * math.sqrt(2 * math.pi) * math.exp(x * x / 2)
    return x - u / (1 + x * u / 2)


# --------------------------------------------------------------------------
# Variance pieces
# --------------------------------------------------------------------------

def _sym(G: NDArray) -> NDArray:
    return np.triu(G) + np.triu(G, 1).T


def _missing_weights(Xt: NDArray, rates: NDArray, beta: NDArray) -> NDArray:
    return (1.0 - rates) * Xt**2 * beta**2


def upsilon_tilde(Xt: ArrayLike, rates: ArrayLike, beta: ArrayLike) -> NDArray[np.float64]:
    """Data-driven missing-data term, O(n p^2)."""
    Xt = np.asarray(Xt, dtype=float)
    rates = np.asarray(rates, dtype=float)
    beta = np.asarray(beta, dtype=float)
    n = Xt.shape[0]
    a = _missing_weights(Xt, rates, beta)
    w = a.sum(axis=1)
    G1 = (Xt * w[:, None]).T @ Xt
    G2 = (Xt * a).T @ Xt
    U = _sym(G1 - G2 - G2.T)
    U[np.diag_indices_from(U)] += (Xt**2 * a).sum(axis=0)
    return U / n


def gamma_tilde(d: IncompleteDesign, sigma_eps: float, beta: ArrayLike) -> NDArray[np.float64]:
    Xt = scaled_design(d)
    G = _sym(Xt.T @ Xt) * (sigma_eps**2 / d.n)
    return G + upsilon_tilde(Xt, d.rates, beta)


def sandwich_diag(d: IncompleteDesign, sigma_eps: float, beta: ArrayLike,
                  rows: ArrayLike) -> NDArray[np.float64]:
    """``diag(M Gamma M^T)`` for rows ``M`` (k x p) without forming ``Gamma``; O(n p k)."""
    Xt = scaled_design(d)
    M = np.atleast_2d(np.asarray(rows, dtype=float))
    beta = np.asarray(beta, dtype=float)
    n = d.n
    a = _missing_weights(Xt, d.rates, beta)
    w = a.sum(axis=1)
    Z = Xt @ M.T  # n x k
    Y = (Xt * a) @ M.T
    diag_term = (Xt**2 * a).sum(axis=0)  # length p
    ups = (w @ Z**2 - 2.0 * (Z * Y).sum(axis=0) + (M**2) @ diag_term) / n
    noise = sigma_eps**2 * (Z**2).sum(axis=0) / n
    return noise + ups


def variance_data_driven(
    d: IncompleteDesign,
    noise: NoiseSpec,
    beta: ArrayLike,
    rows: ArrayLike | None = None,
    coords: Sequence[int] = (),
    full_gamma: bool = False,
) -> VarianceEstimate:
    """Data-driven ``Gamma`` and/or the sandwich diagonal for the given rows."""
    if not noise.sigma_eps > 0:
        raise ValueError("inference needs sigma_eps > 0")
    gamma = gamma_tilde(d, noise.sigma_eps, beta) if full_gamma else None
    vd = None
    if rows is not None:
        vd = sandwich_diag(d, noise.sigma_eps, beta, rows)
    return VarianceEstimate(gamma, VarianceMode.DATA_DRIVEN, vd, tuple(int(c) for c in coords))


def upsilon_oracle(X: ArrayLike, rates: ArrayLike, beta_star: ArrayLike) -> NDArray[np.float64]:
    """Missing-data term from the full design and the true coefficients.

    Equals the conditional mean of :func:`upsilon_tilde` over the mask at
    ``beta = beta_star``.
    """
    X = np.asarray(X, dtype=float)
    rates = np.asarray(rates, dtype=float)
    beta = np.asarray(beta_star, dtype=float)
    n = X.shape[0]
    Q = (1.0 - rates) / rates * X**2 * beta**2
    W = Q.sum(axis=1)
    G1 = (X * W[:, None]).T @ X
    G2 = (X * Q).T @ X
    U = _sym(G1 - G2 - G2.T) / n
    diag = (X**2 * (W[:, None] - Q)).sum(axis=0) / (n * rates)
    U[np.diag_indices_from(U)] = diag
    return U


def variance_oracle(X_full: ArrayLike, rates: ArrayLike, noise: NoiseSpec,
                    beta_star: ArrayLike) -> VarianceEstimate:
    X = np.asarray(X_full, dtype=float)
    rates = np.asarray(rates, dtype=float)
    n = X.shape[0]
    s2 = noise.sigma_eps**2
    XtX = _sym(X.T @ X)
    G = s2 / n * XtX
    G[np.diag_indices_from(G)] += s2 / n * (1.0 / rates - 1.0) * np.diag(XtX)
    G = G + upsilon_oracle(X, rates, beta_star)
    return VarianceEstimate(G, VarianceMode.ORACLE_TRUTH)


# --------------------------------------------------------------------------
# De-biasing and intervals
# --------------------------------------------------------------------------

def debias(
    fit: RegressionFit | ArrayLike,
    precision: PrecisionFit | ArrayLike,
    moments: SurrogateMoments,
    coords: Sequence[int] | None = None,
) -> NDArray[np.float64]:
    """``beta + M (cross - sigma beta)``; entries outside ``coords`` are NaN.

    ``precision`` is a :class:`PrecisionFit` (its unsymmetrized rows are
    used) or an explicit p x p matrix. ``coords`` defaults to the fitted
    columns (or all coordinates for a matrix).
    """
    beta = np.asarray(fit.beta if isinstance(fit, RegressionFit) else fit, dtype=float)
    p = moments.p
    if beta.shape != (p,):
        raise ValueError(f"beta must have length {p}")
    if moments.kind is not MomentKind.SURROGATE_UNKNOWN:
        raise ValueError("de-biasing is defined against the surrogate covariance")
    resid = moments.cross - moments.sigma @ beta
    if isinstance(precision, PrecisionFit):
        coords = tuple(precision.columns) if coords is None else tuple(coords)
        M = precision.rows(coords)
    else:
        T = np.asarray(precision, dtype=float)
        if T.shape != (p, p):
            raise ValueError(f"precision must be {p} x {p}")
        coords = tuple(range(p)) if coords is None else tuple(coords)
        M = T[list(coords)]
    out = np.full(p, np.nan)
    out[list(coords)] = beta[list(coords)] + M @ resid
    return out


def confidence_intervals(beta_debiased: ArrayLike, var_diag: ArrayLike, n: int,
                         alpha: float) -> NDArray[np.float64]:
    """Rows ``(lower, upper)`` with halfwidth ``z_{1-alpha/2} sqrt(var / n)``."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    b = np.asarray(beta_debiased, dtype=float)
    v = np.asarray(var_diag, dtype=float)
    if b.shape != v.shape:
        raise ValueError("beta_debiased and var_diag must have the same length")
    if not np.all(v > 0):
        raise ValueError("variance estimate not positive: increase n or check inputs")
    hw = normal_quantile(1 - alpha / 2) * np.sqrt(v / n)
    return np.column_stack([b - hw, b + hw])


def plugin_sigma_eps(moments: SurrogateMoments, y: ArrayLike, beta: ArrayLike) -> float:
    """Residual scale ``mean(y^2) - 2 cross.beta + beta^T sigma beta`` (square-rooted).

    Unbiased for the residual variance at the true coefficients under the
    missingness model; returned as a labeled plug-in, not used by default.
    """
    y = np.asarray(y, dtype=float)
    beta = np.asarray(beta, dtype=float)
    v = float(np.mean(y**2) - 2 * moments.cross @ beta + beta @ moments.sigma @ beta)
    if not v > 0:
        raise ValueError("plug-in noise variance not positive")
    return math.sqrt(v)


def default_sigma_x(d: IncompleteDesign) -> float:
    """Heuristic design scale: largest column standard deviation of the scaled design."""
    return float(scaled_design(d).std(axis=0).max())


def run_inference(
    d: IncompleteDesign,
    y: ArrayLike,
    noise: NoiseSpec,
    dantzig_cfg: DantzigConfig | None = None,
    clime_cfg: ClimeConfig | None = None,
    coords: Sequence[int] | None = None,
    alpha: float = 0.05,
    *,
    plugin_noise: bool = False,
    pilot: RegressionFit | None = None,
) -> InferenceResult:
    """Pilot fit, CLIME rows for ``coords``, de-biasing, variance and intervals.

    ``pilot`` replaces the Dantzig stage with a supplied fit. Failures are
    re-raised as :class:`StageError` naming the stage.
    """
    dantzig_cfg = dantzig_cfg or DantzigConfig()
    clime_cfg = clime_cfg or ClimeConfig()
    coords = tuple(range(d.p)) if coords is None else tuple(int(c) for c in coords)
    if not coords:
        raise ValueError("coords must be nonempty")
    if any(c < 0 or c >= d.p for c in coords):
        raise ValueError(f"coords must lie in [0, {d.p})")
    meta: dict = {"sigma_x_heuristic": False}
    if noise.sigma_x is None:
        noise = NoiseSpec(noise.sigma_eps, default_sigma_x(d))
        meta["sigma_x_heuristic"] = True

    try:
        moments = surrogate_moments(d, y)
    except ValueError as exc:
        raise StageError("input", exc) from exc
    try:
        fit = pilot if pilot is not None else fit_auto(moments, noise, dantzig_cfg)
    except (ValueError, ArithmeticError) as exc:
        raise StageError("dantzig", exc) from exc
    try:
        prec = fit_clime(moments.sigma, clime_cfg, n=d.n, rho_star=moments.rho_star,
                         sigma_x=noise.sigma_x, columns=coords)
    except (ValueError, ArithmeticError) as exc:
        raise StageError("clime", exc) from exc

    try:
        sigma_eps = noise.sigma_eps
        if plugin_noise:
            sigma_eps = plugin_sigma_eps(moments, y, fit.beta)
            meta["sigma_eps_plugin"] = True
        bu = debias(fit, prec, moments, coords)
        rows = prec.rows(coords)
        var = sandwich_diag(d, sigma_eps, fit.beta, rows)
        if not sigma_eps > 0:
            raise ValueError("inference needs sigma_eps > 0")
        ci = confidence_intervals(bu[list(coords)], var, d.n, alpha)
    except (ValueError, ArithmeticError) as exc:
        raise StageError("inference", exc) from exc

    meta.update({
        "dantzig": fit.meta,
        "dantzig_converged": bool(fit.report.converged),
        "clime_converged": bool(all(r.converged for r in prec.column_reports)),
        "rates_estimated": d.rates_estimated,
        "sigma_x": noise.sigma_x,
    })
    return InferenceResult(
        beta_debiased=bu,
        var_diag=var,
        intervals=ci,
        alpha=alpha,
        coords=coords,
        n=d.n,
        beta_pilot=np.asarray(fit.beta, dtype=float),
        lambda_used=fit.lambda_used,
        nu_used=prec.nu_used,
        sigma_eps_used=sigma_eps,
        meta=meta,
    )
