"""Synthetic experiments: coverage and length of intervals, normality of the
studentized statistics, and error-versus-observation-rate sweeps.

Every replication draws from its own RNG stream, derived from the master seed
and the replication index, so results do not depend on worker count or order.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from numpy.typing import NDArray

from .clime import ClimeConfig
from .dantzig import DantzigConfig, fit
from .design import IncompleteDesign, MomentKind, NoiseSpec, known_moments, surrogate_moments
from .inference import StageError, run_inference
from .solver import SolverConfig

# Stream tags keep model and replication randomness disjoint.
_MODEL_STREAM = 0
_REPLICATION_STREAM = 1


def banded_precision(p: int, base: float = 0.5, width: int = 5) -> NDArray[np.float64]:
    """``Omega_ij = base^|i-j|`` for ``|i-j| <= width``, zero otherwise."""
    k = np.arange(p)
    lag = np.abs(k[:, None] - k[None, :])
    return np.where(lag <= width, base**lag, 0.0)


@dataclass(frozen=True)
class SyntheticModel:
    p: int
    s: int
    omega_band: tuple[float, int]
    sigma0: NDArray[np.float64]
    beta_star: NDArray[np.float64]
    support: tuple[int, ...]
    sigma_eps: float
    rho: NDArray[np.float64]
    factor: NDArray[np.float64] = field(repr=False, compare=False, default=None)

    def __post_init__(self) -> None:
        if len(self.support) != self.s:
            raise ValueError("support size must equal s")
        off = np.ones(self.p, dtype=bool)
        off[list(self.support)] = False
        if np.any(self.beta_star[off] != 0) or np.any(np.abs(self.beta_star[list(self.support)]) != 1):
            raise ValueError("beta_star must be +-1 on the support and 0 elsewhere")
        if self.factor is None:
            object.__setattr__(self, "factor", symmetric_factor(self.sigma0))

    @property
    def signal_norm(self) -> float:
        return float(np.linalg.norm(self.beta_star))

    @property
    def sigma_x(self) -> float:
        """Sub-Gaussian scale used by the automatic tuning: ``sqrt(max diag sigma0)``."""
        return float(math.sqrt(np.max(np.diag(self.sigma0))))

    def noise(self) -> NoiseSpec:
        return NoiseSpec(self.sigma_eps, self.sigma_x)

    def with_rho(self, rho: float | Sequence[float]) -> "SyntheticModel":
        return replace(self, rho=_rates(rho, self.p))


def symmetric_factor(sigma0: NDArray[np.float64]) -> NDArray[np.float64]:
    """Symmetric square root ``V diag(sqrt(w)) V^T``; fails on a non-PSD input."""
    w, V = np.linalg.eigh(sigma0)
    if w.min() < -1e-10 * max(1.0, abs(w.max())):
        raise np.linalg.LinAlgError("covariance is not positive semidefinite")
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def _rates(rho: float | Sequence[float], p: int) -> NDArray[np.float64]:
    r = np.broadcast_to(np.asarray(rho, dtype=float), (p,)).copy()
    if np.any(r <= 0) or np.any(r > 1):
        raise ValueError("observation rates must lie in (0, 1]")
    return r


def _draw_support(p: int, s: int, rng: np.random.Generator) -> tuple[tuple[int, ...], NDArray]:
    support = tuple(sorted(int(j) for j in rng.choice(p, s, replace=False)))
    beta = np.zeros(p)
    beta[list(support)] = rng.choice(np.array([-1.0, 1.0]), s)
    return support, beta


def make_model(p: int, s: int, rho: float | Sequence[float], sigma_eps: float = 0.1,
               seed: int = 42, omega_band: tuple[float, int] = (0.5, 5)) -> SyntheticModel:
    """Banded-precision design with ``s`` coefficients ``+-1`` on a uniformly random support."""
    if not 1 <= s <= p:
        raise ValueError("need 1 <= s <= p")
    omega = banded_precision(p, *omega_band)
    sigma0 = np.linalg.inv(omega)
    sigma0 = 0.5 * (sigma0 + sigma0.T)
    rng = np.random.default_rng(np.random.SeedSequence([seed, _MODEL_STREAM]))
    support, beta = _draw_support(p, s, rng)
    return SyntheticModel(p, s, omega_band, sigma0, beta, support, float(sigma_eps), _rates(rho, p))


def replication_seed(seed: int, t: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, _REPLICATION_STREAM, t])


def generate(model: SyntheticModel, n: int, seed) -> tuple[IncompleteDesign, NDArray, NDArray]:
    """Draw ``(design, y, X_full)``. ``seed`` is an int or a SeedSequence."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    return _generate(model, model.beta_star, n, rng)


def _generate(model: SyntheticModel, beta: NDArray, n: int, rng: np.random.Generator):
    X = rng.standard_normal((n, model.p)) @ model.factor
    y = X @ beta + model.sigma_eps * rng.standard_normal(n)
    mask = rng.random((n, model.p)) < model.rho
    return IncompleteDesign.from_full(X, mask, model.rho), y, X


# --------------------------------------------------------------------------
# Replication runner
# --------------------------------------------------------------------------

def resolve_workers(workers: int | None) -> int:
    if workers is None:
        env = os.environ.get("MISSREG_WORKERS")
        workers = int(env) if env else 1
    if workers < 1:
        raise ValueError("workers must be >= 1")
    return workers


def _map(task: Callable, args: list, workers: int) -> list:
    """Results slotted by argument index."""
    if workers == 1 or len(args) <= 1:
        return [task(a) for a in args]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(task, args, chunksize=max(1, len(args) // (4 * workers))))


# Experiment tuning: constants multiplying the automatic lambda and nu
# formulas, chosen by a pilot at n=1000, p=200, rho=0.9 (see README).
LAMBDA_CONSTANT = 0.1
NU_CONSTANT = 0.2
_EXACT = SolverConfig(method="homotopy")


@dataclass(frozen=True)
class InferenceSettings:
    """Tuning shared by every replication of an inference experiment."""

    dantzig: DantzigConfig = field(
        default_factory=lambda: DantzigConfig(auto_constant=LAMBDA_CONSTANT, solver=_EXACT))
    clime: ClimeConfig = field(
        default_factory=lambda: ClimeConfig(auto_constant=NU_CONSTANT, solver=_EXACT))
    two_stage: bool = False
    plugin_noise: bool = False


def _inference_task(args) -> dict:
    model, n, alpha, t, seed, settings, coords, redraw = args
    rng = np.random.default_rng(replication_seed(seed, t))
    beta = model.beta_star
    support = model.support
    if redraw:
        support, beta = _draw_support(model.p, model.s, rng)
    d, y, _ = _generate(model, beta, n, rng)
    dcfg = settings.dantzig
    pilot = None
    try:
        if not settings.two_stage:
            pilot = fit(surrogate_moments(d, y), model.noise(), dcfg)
        res = run_inference(d, y, model.noise(), dcfg, settings.clime, coords, alpha,
                            plugin_noise=settings.plugin_noise, pilot=pilot)
    except StageError as exc:
        return {"t": t, "failed": exc.stage, "support": support}
    except (ValueError, ArithmeticError) as exc:
        return {"t": t, "failed": f"{type(exc).__name__}: {exc}", "support": support}
    lo, hi = res.intervals[:, 0], res.intervals[:, 1]
    b = beta[list(coords)]
    return {
        "t": t,
        "failed": None,
        "support": support,
        "covered": (lo <= b) & (b <= hi),
        "length": hi - lo,
        "delta": res.studentized(beta),
        "lambda": res.lambda_used,
        "nu": res.nu_used,
    }


@dataclass(frozen=True)
class ExperimentReport:
    """Per-coordinate coverage and length plus the aggregated table row.

    ``covered``/``length``/``delta`` are ``T x |coords|`` (NaN for failed
    replications). ``groups`` maps a label to the coordinates it averages.
    """

    n: int
    p: int
    T: int
    alpha: float
    seed: int
    coords: tuple[int, ...]
    support: tuple[int, ...]
    avgcov: NDArray[np.float64]
    avglen: NDArray[np.float64]
    groups: dict[str, tuple[int, ...]]
    covered: NDArray[np.float64]
    length: NDArray[np.float64]
    delta: NDArray[np.float64]
    failures: int
    failure_stages: dict[str, int]
    redraw_beta: bool = False
    meta: dict = field(default_factory=dict, compare=False)

    def group_avgcov(self, label: str) -> float:
        return _group_mean(self.avgcov, self.coords, self.groups[label])

    def group_avglen(self, label: str) -> float:
        return _group_mean(self.avglen, self.coords, self.groups[label])

    def table_row(self) -> dict[str, float]:
        """Avgcov/Avglen for each group, in table column order."""
        out = {}
        for label in self.groups:
            out[f"avgcov[{label}]"] = self.group_avgcov(label)
            out[f"avglen[{label}]"] = self.group_avglen(label)
        return out


def _group_mean(values: NDArray, coords: tuple[int, ...], group: tuple[int, ...]) -> float:
    pos = {c: k for k, c in enumerate(coords)}
    idx = [pos[j] for j in group]
    return float(np.mean(values[idx])) if idx else math.nan


TABLE_GROUPS = ("j in J0", "j not in J0", "J0", "J0c")


def _groups(p: int, support: tuple[int, ...], coords: tuple[int, ...], seed: int) -> dict:
    sup = set(support)
    inside = tuple(j for j in coords if j in sup)
    outside = tuple(j for j in coords if j not in sup)
    rng = np.random.default_rng(np.random.SeedSequence([seed, _MODEL_STREAM, 1]))
    g = {}
    g["j in J0"] = (int(rng.choice(inside)),) if inside else ()
    g["j not in J0"] = (int(rng.choice(outside)),) if outside else ()
    g["J0"] = inside
    g["J0c"] = outside
    return g


def _collect(results: list[dict], T: int, k: int):
    cov = np.full((T, k), np.nan)
    length = np.full((T, k), np.nan)
    delta = np.full((T, k), np.nan)
    stages: dict[str, int] = {}
    for r in results:
        if r["failed"] is not None:
            key = r["failed"].split(":")[0]
            stages[key] = stages.get(key, 0) + 1
            continue
        cov[r["t"]] = r["covered"]
        length[r["t"]] = r["length"]
        delta[r["t"]] = r["delta"]
    return cov, length, delta, stages


def run_coverage(
    model: SyntheticModel,
    n: int,
    T: int,
    alpha: float = 0.05,
    seed: int = 42,
    *,
    settings: InferenceSettings | None = None,
    coords: Sequence[int] | None = None,
    workers: int | None = 1,
    redraw_beta: bool = False,
) -> ExperimentReport:
    """``T`` replications of generate -> inference; coverage is of ``beta_star``.

    With ``redraw_beta`` each replication draws its own support and signs;
    group averages then use each replication's own support.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    settings = settings or InferenceSettings()
    coords = tuple(range(model.p)) if coords is None else tuple(int(c) for c in coords)
    if not coords:
        raise ValueError("coords must be nonempty")
    workers = resolve_workers(workers)
    args = [(model, n, alpha, t, seed, settings, coords, redraw_beta) for t in range(T)]
    results = _map(_inference_task, args, workers)
    cov, length, delta, stages = _collect(results, T, len(coords))
    ok = ~np.isnan(cov[:, 0])
    with np.errstate(invalid="ignore"):
        avgcov = np.nanmean(cov, axis=0) if ok.any() else np.full(len(coords), np.nan)
        avglen = np.nanmean(length, axis=0) if ok.any() else np.full(len(coords), np.nan)
    groups = _groups(model.p, model.support, coords, seed)
    meta = {"lambda": [r.get("lambda") for r in results], "nu": [r.get("nu") for r in results]}
    if redraw_beta:
        meta["redraw_group_means"] = _redraw_group_means(results, cov, length, coords)
    return ExperimentReport(
        n=n, p=model.p, T=T, alpha=alpha, seed=seed, coords=coords, support=model.support,
        avgcov=avgcov, avglen=avglen, groups=groups, covered=cov, length=length, delta=delta,
        failures=int((~ok).sum()), failure_stages=stages, redraw_beta=redraw_beta, meta=meta,
    )


def _redraw_group_means(results, cov, length, coords) -> dict[str, float]:
    """Support-relative averages when each replication has its own support."""
    ins_c, out_c, ins_l, out_l = [], [], [], []
    for r in results:
        if r["failed"] is not None:
            continue
        t = r["t"]
        sup = np.isin(np.array(coords), np.array(r["support"]))
        ins_c.append(cov[t, sup].mean())
        out_c.append(cov[t, ~sup].mean() if (~sup).any() else np.nan)
        ins_l.append(length[t, sup].mean())
        out_l.append(length[t, ~sup].mean() if (~sup).any() else np.nan)
    return {
        "avgcov[J0]": float(np.nanmean(ins_c)) if ins_c else math.nan,
        "avglen[J0]": float(np.nanmean(ins_l)) if ins_l else math.nan,
        "avgcov[J0c]": float(np.nanmean(out_c)) if out_c else math.nan,
        "avglen[J0c]": float(np.nanmean(out_l)) if out_l else math.nan,
    }


@dataclass(frozen=True)
class NormalityReport:
    coords: tuple[int, ...]
    delta: NDArray[np.float64]  # T x |coords|, NaN for failed replications
    ks_statistic: NDArray[np.float64]
    ks_pvalue: NDArray[np.float64]
    T: int
    failures: int
    seed: int

    def histogram(self, bins: int = 30, span: float = 4.0) -> tuple[NDArray, NDArray]:
        """Binned counts per coordinate on ``[-span, span]`` (values outside are clipped)."""
        edges = np.linspace(-span, span, bins + 1)
        counts = np.stack([
            np.histogram(np.clip(col[~np.isnan(col)], -span, span), edges)[0]
            for col in self.delta.T
        ])
        return edges, counts


def run_normality(
    model: SyntheticModel,
    n: int,
    T: int,
    coords: Sequence[int],
    seed: int = 42,
    *,
    settings: InferenceSettings | None = None,
    workers: int | None = 1,
) -> NormalityReport:
    """Studentized de-biased statistics and a one-sample KS test against N(0, 1)."""
    from scipy.stats import kstest

    coords = tuple(int(c) for c in coords)
    if not coords:
        raise ValueError("coords must be nonempty")
    if T < 30:
        raise ValueError("need T >= 30")
    settings = settings or InferenceSettings()
    workers = resolve_workers(workers)
    args = [(model, n, 0.05, t, seed, settings, coords, False) for t in range(T)]
    results = _map(_inference_task, args, workers)
    _, _, delta, _ = _collect(results, T, len(coords))
    ok = ~np.isnan(delta[:, 0])
    if ok.sum() < 30:
        raise ValueError("need T >= 30 successful replications")
    stats, pvals = [], []
    for col in delta[ok].T:
        r = kstest(col, "norm")
        stats.append(r.statistic)
        pvals.append(r.pvalue)
    return NormalityReport(coords, delta, np.array(stats), np.array(pvals), T,
                           int((~ok).sum()), seed)


@dataclass(frozen=True)
class RateSweepReport:
    rho_grid: tuple[float, ...]
    median_error: NDArray[np.float64]
    errors: NDArray[np.float64]  # len(rho_grid) x T, NaN for failures
    slope: float
    kind: MomentKind
    T: int
    n: int
    failures: int
    seed: int


def _rate_task(args) -> float:
    model, n, t, seed, cfg, known = args
    rng = np.random.default_rng(replication_seed(seed, t))
    d, y, _ = _generate(model, model.beta_star, n, rng)
    m = known_moments(d, y, model.sigma0) if known else surrogate_moments(d, y)
    try:
        f = fit(m, model.noise(), cfg)
    except (ValueError, ArithmeticError):
        return math.nan
    return float(np.linalg.norm(f.beta - model.beta_star))


def rate_sweep_config(model: SyntheticModel, constant: float = 2.0) -> DantzigConfig:
    """Kind-dependent rate with the true signal norm plugged in."""
    return DantzigConfig(auto_constant=constant, beta_norm_guess=model.signal_norm, rate="by-kind",
                         solver=_EXACT)


def run_rate_sweep(
    model: SyntheticModel,
    n: int,
    rho_grid: Sequence[float],
    T: int,
    seed: int = 42,
    known_sigma: bool = False,
    *,
    cfg: DantzigConfig | None = None,
    workers: int | None = 1,
) -> RateSweepReport:
    """Median l2 error per observation rate and the log-log slope against ``1/rho``.

    Replication ``t`` uses the same stream at every rate, so the grid points
    share their Gaussian draws (common random numbers).
    """
    grid = tuple(float(r) for r in rho_grid)
    if not grid or any(not 0 < r <= 1 for r in grid):
        raise ValueError("rho_grid must be a nonempty subset of (0, 1]")
    if T < 1:
        raise ValueError("T must be >= 1")
    cfg = cfg or rate_sweep_config(model)
    workers = resolve_workers(workers)
    args = [(model.with_rho(r), n, t, seed, cfg, known_sigma) for r in grid for t in range(T)]
    errs = np.array(_map(_rate_task, args, workers)).reshape(len(grid), T)
    med = np.array([np.nanmedian(e) if np.isfinite(e).any() else np.nan for e in errs])
    slope = math.nan
    if len(grid) >= 2 and np.all(np.isfinite(med)) and np.all(med > 0):
        slope = float(np.polyfit(np.log(1.0 / np.array(grid)), np.log(med), 1)[0])
    kind = MomentKind.POPULATION_KNOWN if known_sigma else MomentKind.SURROGATE_UNKNOWN
    return RateSweepReport(grid, med, errs, slope, kind, T, n, int(np.isnan(errs).sum()), seed)
