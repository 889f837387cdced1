"""Incomplete designs and their inverse-probability-weighted moments.

Missing entries are stored zero-imputed together with an explicit 0/1 mask.
Every estimator in the package consumes the rescaled design
``Xt[i, j] = values[i, j] / rates[j]`` and the two surrogate moments built
from it: the bias-corrected second-moment matrix and the cross moment
``Xt.T @ y / n``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray


class MomentKind(enum.Enum):
    SURROGATE_UNKNOWN = "surrogate-unknown"
    POPULATION_KNOWN = "population-known"


def _frozen(a: ArrayLike, dtype=float) -> NDArray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class IncompleteDesign:
    """Zero-imputed covariates, observation mask and per-column observation rates.

    ``rates_estimated`` is True when the rates were estimated from the mask
    rather than supplied; downstream reports carry the flag.
    """

    values: NDArray[np.float64]
    mask: NDArray[np.int8]
    rates: NDArray[np.float64]
    rates_estimated: bool = False

    def __post_init__(self) -> None:
        values = _frozen(self.values)
        mask = np.asarray(self.mask)
        if values.ndim != 2:
            raise ValueError("values must be an n x p matrix")
        if mask.shape != values.shape:
            raise ValueError(f"mask shape {mask.shape} != values shape {values.shape}")
        if not np.all((mask == 0) | (mask == 1)):
            raise ValueError("mask entries must be 0 or 1")
        mask = _frozen(mask, dtype=np.int8)
        rates = _frozen(self.rates)
        if rates.shape != (values.shape[1],):
            raise ValueError(f"rates must have length p={values.shape[1]}")
        if not np.all((rates > 0) & (rates <= 1)):
            raise ValueError("every observation rate must lie in (0, 1]")
        if not np.all(np.isfinite(values)):
            raise ValueError("observed values must be finite")
        if np.any(values[mask == 0] != 0):
            raise ValueError("unobserved entries must hold 0")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "rates", rates)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def rho_star(self) -> float:
        return float(self.rates.min())

    @classmethod
    def from_full(cls, X: ArrayLike, mask: ArrayLike, rates: ArrayLike) -> "IncompleteDesign":
        """Apply ``mask`` to a fully observed matrix (simulation path)."""
        X = np.asarray(X, dtype=float)
        mask = np.asarray(mask).astype(np.int8)
        return cls(np.where(mask == 1, X, 0.0), mask, rates)


def from_raw(values_with_missing: ArrayLike, rates: ArrayLike | None = None) -> IncompleteDesign:
    """Build an :class:`IncompleteDesign` from a matrix whose missing entries are NaN.

    When ``rates`` is omitted each column's rate is its observed fraction,
    floored at ``1 / (2n)``; a column with no observed entry is an error in
    that case.
    """
    raw = np.array(values_with_missing, dtype=float)
    if raw.ndim != 2 or raw.shape[0] < 1 or raw.shape[1] < 1:
        raise ValueError("values must be an n x p matrix with n, p >= 1")
    missing = np.isnan(raw)
    if np.any(np.isinf(raw)):
        raise ValueError("observed values must be finite")
    mask = (~missing).astype(np.int8)
    n = raw.shape[0]
    estimated = rates is None
    if estimated:
        counts = mask.sum(axis=0)
        never = np.flatnonzero(counts == 0)
        if never.size:
            raise ValueError(f"column never observed: {never.tolist()}")
        rates = np.maximum(counts / n, 1.0 / (2 * n))
    values = np.where(missing, 0.0, raw)
    return IncompleteDesign(values, mask, rates, rates_estimated=estimated)


def scaled_design(d: IncompleteDesign) -> NDArray[np.float64]:
    """Inverse-probability-scaled design ``values / rates`` (column-wise)."""
    return d.values / d.rates


def _gram(A: NDArray, B: NDArray | None = None) -> NDArray:
    # Upper triangle mirrored so the result is exactly symmetric.
    if B is None:
        G = A.T @ A
        upper = np.triu(G)
        return upper + np.triu(G, 1).T
    return A.T @ B


def sample_covariance(X: ArrayLike) -> NDArray[np.float64]:
    """``X.T @ X / n`` with the same accumulation as :func:`surrogate_covariance`."""
    X = np.asarray(X, dtype=float)
    return _gram(X) / X.shape[0]


def surrogate_covariance(d: IncompleteDesign) -> NDArray[np.float64]:
    """Bias-corrected second moment of the scaled design.

    Off-diagonal entries of ``Xt.T @ Xt / n`` are kept; diagonal entries are
    multiplied by the column rate. The result is unbiased for ``X.T @ X / n``
    given ``X`` and may be indefinite.
    """
    Xt = scaled_design(d)
    S = _gram(Xt) / d.n
    idx = np.diag_indices(d.p)
    S[idx] = S[idx] * d.rates
    return S


def surrogate_cross(d: IncompleteDesign, y: ArrayLike) -> NDArray[np.float64]:
    y = np.asarray(y, dtype=float)
    if y.shape != (d.n,):
        raise ValueError(f"y has shape {y.shape}, expected ({d.n},)")
    return scaled_design(d).T @ y / d.n


@dataclass(frozen=True)
class SurrogateMoments:
    """The (covariance, cross-moment) pair consumed by every estimator.

    ``sigma`` is either the surrogate covariance of the design or a
    user-supplied population covariance, as recorded by ``kind``.
    """

    sigma: NDArray[np.float64]
    cross: NDArray[np.float64]
    kind: MomentKind
    n: int
    rho_star: float = 1.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        sigma = np.array(self.sigma, dtype=float)
        cross = _frozen(self.cross)
        p = cross.shape[0]
        if sigma.shape != (p, p):
            raise ValueError(f"sigma must be {p} x {p}, got {sigma.shape}")
        if not np.array_equal(sigma, sigma.T):
            sigma = np.triu(sigma) + np.triu(sigma, 1).T
        sigma.setflags(write=False)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "cross", cross)

    @property
    def p(self) -> int:
        return self.cross.shape[0]


def surrogate_moments(d: IncompleteDesign, y: ArrayLike) -> SurrogateMoments:
    return SurrogateMoments(
        surrogate_covariance(d),
        surrogate_cross(d, y),
        MomentKind.SURROGATE_UNKNOWN,
        d.n,
        rho_star=d.rho_star(),
        meta={"rates_estimated": d.rates_estimated},
    )


def known_moments(d: IncompleteDesign, y: ArrayLike, sigma0: ArrayLike) -> SurrogateMoments:
    """Moments for the estimator that is handed the population covariance."""
    return SurrogateMoments(
        np.asarray(sigma0, dtype=float),
        surrogate_cross(d, y),
        MomentKind.POPULATION_KNOWN,
        d.n,
        rho_star=d.rho_star(),
        meta={"rates_estimated": d.rates_estimated},
    )


@dataclass(frozen=True)
class NoiseSpec:
    """Noise standard deviation and sub-Gaussian design scale.

    ``sigma_x`` only enters the automatic tuning formulas and may be left
    unset when every tuning parameter is given explicitly.
    """

    sigma_eps: float
    sigma_x: float | None = None

    def __post_init__(self) -> None:
        if not self.sigma_eps >= 0:
            raise ValueError("sigma_eps must be >= 0")
        if self.sigma_x is not None and not self.sigma_x >= 0:
            raise ValueError("sigma_x must be >= 0")
