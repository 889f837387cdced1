"""Approximate inverse of a (possibly indefinite) covariance by column-wise CLIME.

Column ``i`` solves ``minimize ||w||_1  s.t.  ||sigma w - e_i||_inf <= nu``.
All columns share ``sigma``, so they are solved as one batch against a single
cached factorization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .solver import InfeasibleError, L1LinfSolver, SolveReport, SolverConfig

AUTO = "auto"


@dataclass(frozen=True)
class ClimeConfig:
    nu: Union[float, Literal["auto"]] = AUTO
    auto_constant: float = 1.0
    b1_guess: float = 2.0
    symmetrize: bool = True
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self) -> None:
        if self.nu != AUTO and not (isinstance(self.nu, (int, float)) and self.nu > 0):
            raise ValueError("nu must be positive or 'auto'")
        if not self.auto_constant > 0:
            raise ValueError("auto_constant must be positive")
        if not self.b1_guess > 0:
            raise ValueError("b1_guess must be positive")


@dataclass(frozen=True)
class PrecisionFit:
    """Fitted approximate inverse.

    ``raw[:, k]`` is the unsymmetrized solution for target column
    ``columns[k]``. ``theta`` is the assembled p x p matrix (symmetrized when
    requested and every column was solved; unsolved columns hold NaN).
    """

    theta: NDArray[np.float64]
    nu_used: float
    column_reports: list[SolveReport]
    columns: tuple[int, ...]
    raw: NDArray[np.float64]
    symmetrized: bool = False

    def rows(self, coords: Sequence[int]) -> NDArray[np.float64]:
        """Rows ``m_j`` with ``||m_j^T sigma - e_j||_inf <= nu`` for each ``j`` in ``coords``.

        For symmetric ``sigma`` these are the transposed raw columns.
        """
        pos = {c: k for k, c in enumerate(self.columns)}
        missing = [j for j in coords if j not in pos]
        if missing:
            raise KeyError(f"columns not fitted: {missing}")
        return self.raw[:, [pos[j] for j in coords]].T


def auto_nu(n: int, p: int, rho_star: float, sigma_x: float, b1: float,
            constant: float = 1.0) -> float:
    """``C sx^2 b1 sqrt(log p / (rho^2 n))``; ``log 2`` replaces ``log p`` at ``p = 1``."""
    if n < 1 or p < 1:
        raise ValueError("n and p must be >= 1")
    if not 0 < rho_star <= 1:
        raise ValueError("rho_star must lie in (0, 1]")
    lp = math.log(p) if p > 1 else math.log(2.0)
    return constant * sigma_x**2 * b1 * math.sqrt(lp / (rho_star**2 * n))


def symmetrize_min_abs(theta: ArrayLike) -> NDArray[np.float64]:
    """Entrywise pick of ``theta[j, k]`` or ``theta[k, j]``, whichever is smaller in magnitude."""
    T = np.asarray(theta, dtype=float)
    Tt = T.T
    return np.where(np.abs(T) <= np.abs(Tt), T, Tt)


def resolve_nu(cfg: ClimeConfig, p: int, n: int | None, rho_star: float,
               sigma_x: float | None) -> float:
    if cfg.nu != AUTO:
        return float(cfg.nu)
    if n is None or sigma_x is None:
        raise ValueError("automatic nu needs n and sigma_x")
    return auto_nu(n, p, rho_star, sigma_x, cfg.b1_guess, cfg.auto_constant)


def fit_clime(
    sigma: ArrayLike,
    cfg: ClimeConfig | None = None,
    *,
    n: int | None = None,
    rho_star: float = 1.0,
    sigma_x: float | None = None,
    columns: Sequence[int] | None = None,
    solver: L1LinfSolver | None = None,
) -> PrecisionFit:
    """Solve the CLIME column problems for ``columns`` (default: all).

    ``n``, ``rho_star`` and ``sigma_x`` feed the automatic ``nu``. A prebuilt
    ``solver`` for the same ``sigma`` may be passed to reuse its factorization.
    """
    cfg = cfg or ClimeConfig()
    S = np.asarray(sigma, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError("sigma must be square")
    if not np.all(np.isfinite(S)):
        raise ValueError("sigma must be finite")
    if not np.allclose(S, S.T, rtol=0, atol=1e-12 * (1 + np.abs(S).max(initial=0.0))):
        raise ValueError("sigma must be symmetric")
    p = S.shape[0]
    cols = tuple(range(p)) if columns is None else tuple(int(c) for c in columns)
    if any(c < 0 or c >= p for c in cols):
        raise ValueError(f"columns must lie in [0, {p})")
    nu = resolve_nu(cfg, p, n, rho_star, sigma_x)

    solver = solver or L1LinfSolver(S, cfg.solver)
    E = np.zeros((p, len(cols)))
    E[list(cols), range(len(cols))] = 1.0
    try:
        reports = solver.solve_many(E, nu)
    except InfeasibleError as exc:
        col = cols[exc.column] if exc.column is not None else None
        raise InfeasibleError(
            f"column {col} infeasible for nu={nu:.6g}: increase nu", column=col
        ) from exc

    raw = np.column_stack([r.solution for r in reports]) if cols else np.zeros((p, 0))
    theta = np.full((p, p), np.nan)
    theta[:, list(cols)] = raw
    full = len(set(cols)) == p
    sym = bool(cfg.symmetrize and full)
    if sym:
        theta = symmetrize_min_abs(theta)
    return PrecisionFit(theta, nu, reports, cols, raw, sym)
