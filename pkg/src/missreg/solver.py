"""Solver for ``minimize ||x||_1  subject to  ||A x - b||_inf <= lam``.

The ADMM splitting introduces ``z = A x`` (projected onto the box of radius
``lam`` around ``b``) and ``w = x`` (soft-thresholded), so that both
subproblem updates are closed form and the x-update is a linear solve with
the fixed matrix ``I + A^T A``. Because both blocks share the penalty, that
matrix does not depend on the penalty; its eigendecomposition is computed
once per ``A`` and reused for every right-hand side and every penalty
value. Many right-hand sides are solved together, each column with its own
adaptive penalty and its own stopping test.

Iterations run on a copy of the problem rescaled so that ``A`` has unit
spectral norm (the solution set is unchanged by that rescaling).

Iterates are polished periodically: the support and the active constraints
are read off the iterate and the corresponding small linear system is
solved. When the resulting vertex is feasible and carries a dual optimality
certificate it is exact, and that column stops early. ADMM residuals alone
often reach the optimal support long before they meet a tight tolerance.

With ``method="homotopy"`` each column is instead solved exactly by
following the solution path in ``lam`` (see :mod:`missreg.homotopy`);
columns on which the path breaks down numerically fall back to ADMM.

:func:`lp_oracle` is an independent dense simplex used for testing.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .homotopy import PathInfeasible, certify, homotopy_solve

log = logging.getLogger(__name__)


class InfeasibleError(ValueError):
    """Raised when the constraint set appears to be empty."""

    def __init__(self, message: str, column: int | None = None):
        super().__init__(message)
        self.column = column


@dataclass(frozen=True)
class SolverConfig:
    penalty: float = 1.0
    tol_primal: float = 1e-7
    tol_dual: float = 1e-7
    max_iters: int = 20000
    over_relaxation: float = 1.5
    adaptive_penalty: bool = True
    polish: bool = True
    stall_window: int = 1000
    method: str = "admm"

    def __post_init__(self) -> None:
        if not self.penalty > 0:
            raise ValueError("penalty must be positive")
        if not (self.tol_primal > 0 and self.tol_dual > 0):
            raise ValueError("tolerances must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.method not in ("admm", "homotopy"):
            raise ValueError("method must be 'admm' or 'homotopy'")
        if not 1.0 <= self.over_relaxation <= 1.8:
            raise ValueError("over_relaxation must lie in [1.0, 1.8]")


@dataclass(frozen=True)
class SolveReport:
    solution: NDArray[np.float64]
    iterations: int
    primal_residual: float
    dual_residual: float
    converged: bool
    objective: float
    violation: float = 0.0
    polished: bool = False
    primal_threshold: float = float("inf")
    dual_threshold: float = float("inf")

    def as_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "primal_residual": self.primal_residual,
            "dual_residual": self.dual_residual,
            "converged": self.converged,
            "objective": self.objective,
            "violation": self.violation,
            "polished": self.polished,
            "primal_threshold": self.primal_threshold,
            "dual_threshold": self.dual_threshold,
        }


def _soft(v: NDArray, t: NDArray | float) -> NDArray:
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


# Iteration cadence of the (comparatively costly) checks.
_CHECK_EVERY = 10
_POLISH_EVERY = 50
_ADAPT_EVERY = 20


class L1LinfSolver:
    """ADMM solver bound to one matrix ``A``; reuse it across right-hand sides."""

    def __init__(self, A: ArrayLike, cfg: SolverConfig | None = None):
        A = np.asarray(A, dtype=float)
        if A.ndim != 2:
            raise ValueError("A must be a matrix")
        if not np.all(np.isfinite(A)):
            raise ValueError("A must be finite")
        self.A = A
        self.cfg = cfg or SolverConfig()
        # The problem is invariant under (A, b, lam) -> (A, b, lam) / s; iterate
        # on the copy with unit spectral norm so one penalty fits both blocks.
        evals, V = np.linalg.eigh(A.T @ A)
        evals = np.clip(evals, 0.0, None)
        top = float(evals.max(initial=0.0))
        self._scale = float(np.sqrt(top)) if top > 0 else 1.0
        self._As = A / self._scale
        self._V = V
        self._inv = 1.0 / (1.0 + evals / self._scale**2)
        self._anorm = max(float(np.abs(self._As).max(initial=0.0)), 1e-300)

    def _xsolve(self, rhs: NDArray) -> NDArray:
        V = self._V
        return V @ (self._inv[:, None] * (V.T @ rhs))

    def solve(self, b: ArrayLike, lam: float, x0: ArrayLike | None = None) -> SolveReport:
        b = np.asarray(b, dtype=float)
        X0 = None if x0 is None else np.asarray(x0, dtype=float)[:, None]
        return self.solve_many(b[:, None], lam, X0)[0]

    def solve_many(
        self, B: ArrayLike, lam: float, X0: ArrayLike | None = None
    ) -> list[SolveReport]:
        """Solve one problem per column of ``B`` (all sharing ``A`` and ``lam``).

        Raises :class:`InfeasibleError` (with ``column`` set) as soon as any
        column is detected infeasible.
        """
        A, cfg = self._As, self.cfg
        B = np.asarray(B, dtype=float)
        k, m = A.shape
        if B.ndim != 2 or B.shape[0] != k:
            raise ValueError(f"right-hand sides must have {k} rows")
        if not lam >= 0:
            raise ValueError("lambda must be >= 0")
        if not np.all(np.isfinite(B)):
            raise ValueError("b must be finite")
        lam_orig = float(lam)
        B = B / self._scale
        lam = lam_orig / self._scale
        if cfg.method == "homotopy":
            return self._solve_homotopy(B, lam, lam_orig, X0)
        return self._solve_admm(B, lam, lam_orig, X0)

    def _solve_admm(self, B: NDArray, lam: float, lam_orig: float, X0) -> list[SolveReport]:
        A, cfg = self._As, self.cfg
        k, m = A.shape
        r = B.shape[1]

        x = np.zeros((m, r)) if X0 is None else np.array(X0, dtype=float).reshape(m, r)
        w = x.copy()
        z = B + np.clip(A @ x - B, -lam, lam)
        u = np.zeros((k, r))
        v = np.zeros((m, r))
        rho = np.full(r, float(cfg.penalty))
        rho_lo, rho_hi = cfg.penalty * 1e-6, cfg.penalty * 1e6

        iters = np.zeros(r, dtype=int)
        rpri = np.full(r, np.inf)
        rdual = np.full(r, np.inf)
        thr_p = np.full(r, np.inf)
        thr_d = np.full(r, np.inf)
        polished: list = [None] * r
        tried: list[set] = [set() for _ in range(r)]
        # x = 0 is optimal whenever it is feasible.
        done = np.abs(B).max(axis=0, initial=0.0) <= lam
        for j in np.flatnonzero(done):
            polished[j] = (np.zeros(m), (0.0, 0.0))
        active = np.flatnonzero(~done)
        cert_count = np.zeros(r, dtype=int)
        alpha = cfg.over_relaxation
        sqrt_pri = np.sqrt(k + m)
        sqrt_dual = np.sqrt(m)

        for it in range(1, cfg.max_iters + 1):
            if active.size == 0:
                break
            a = active
            check = it % _CHECK_EVERY == 0 or it == cfg.max_iters
            xa = self._xsolve(A.T @ (z[:, a] - u[:, a]) + (w[:, a] - v[:, a]))
            Ax = A @ xa
            za_old, wa_old, ua_old = z[:, a], w[:, a], u[:, a]
            Axh = alpha * Ax + (1.0 - alpha) * za_old
            xh = alpha * xa + (1.0 - alpha) * wa_old
            Ba = B[:, a]
            za = Ba + np.clip(Axh + ua_old - Ba, -lam, lam)
            ra = rho[a]
            wa = _soft(xh + v[:, a], 1.0 / ra)
            ua = ua_old + Axh - za
            va = v[:, a] + xh - wa
            x[:, a], z[:, a], w[:, a], u[:, a], v[:, a] = xa, za, wa, ua, va
            iters[a] = it
            if not check:
                continue

            rp = np.sqrt(((Ax - za) ** 2).sum(0) + ((xa - wa) ** 2).sum(0))
            rd = ra * np.sqrt(((A.T @ (za - za_old) + (wa - wa_old)) ** 2).sum(0))
            primal_scale = np.maximum(
                np.sqrt((Ax**2).sum(0) + (xa**2).sum(0)),
                np.sqrt((za**2).sum(0) + (wa**2).sum(0)),
            )
            eps_p = sqrt_pri * cfg.tol_primal + cfg.tol_primal * primal_scale
            # Scale of the dual: the two blocks of A^T u + v cancel at optimum,
            # so normalize by the larger block rather than their sum.
            dual_scale = ra * np.maximum(
                np.sqrt(((A.T @ ua) ** 2).sum(0)), np.sqrt((va**2).sum(0))
            )
            eps_d = sqrt_dual * cfg.tol_dual + cfg.tol_dual * dual_scale
            rpri[a], rdual[a] = rp, rd
            thr_p[a], thr_d[a] = eps_p, eps_d
            fin = (rp <= eps_p) & (rd <= eps_d)

            # Diverging scaled dual along a Farkas direction certifies infeasibility.
            cert = _farkas(A, Ba, lam, ua - ua_old, self._anorm)
            cert_count[a] = np.where(cert, cert_count[a] + _CHECK_EVERY, 0)
            bad = np.flatnonzero(cert_count[a] >= cfg.stall_window)
            if bad.size:
                col = int(a[bad[0]])
                raise InfeasibleError(
                    f"likely infeasible: no point satisfies the constraint with lambda={lam_orig:.6g}",
                    column=col,
                )

            if cfg.polish and it % _POLISH_EVERY == 0:
                for jj in np.flatnonzero(~fin):
                    col = a[jj]
                    cand, kkt = _polish(A, B[:, col], lam, wa[:, jj], ua[:, jj], tried[col])
                    if kkt is not None:
                        polished[col] = (cand, kkt)
                        fin[jj] = True

            if cfg.adaptive_penalty and it % _ADAPT_EVERY == 0:
                # Balance relative residuals; only act on a sizable imbalance.
                pn = rp / np.maximum(primal_scale, 1e-300)
                dn = rd / np.maximum(dual_scale, 1e-300)
                factor = np.sqrt(pn / np.maximum(dn, 1e-300))
                factor = np.where((factor > 5.0) | (factor < 0.2), factor, 1.0)
                new = np.clip(ra * factor, rho_lo, rho_hi)
                factor = new / ra
                rho[a] = new
                u[:, a] /= factor[None, :]
                v[:, a] /= factor[None, :]

            if fin.any():
                done[a[fin]] = True
                active = a[~fin]

        return [
            self._finish(B[:, j], lam, w[:, j], u[:, j], int(iters[j]),
                         (float(rpri[j]), float(rdual[j])),
                         (float(thr_p[j]), float(thr_d[j])), bool(done[j]), polished[j])
            for j in range(r)
        ]

    def _solve_homotopy(self, B: NDArray, lam: float, lam_orig: float, X0) -> list[SolveReport]:
        A, cfg = self._As, self.cfg
        reports: list = []
        fallback = []
        for j in range(B.shape[1]):
            try:
                res = homotopy_solve(A, B[:, j], lam)
            except PathInfeasible as exc:
                raise InfeasibleError(
                    f"likely infeasible: no point satisfies the constraint with lambda={lam_orig:.6g}",
                    column=j,
                ) from exc
            if not res.ok:
                reports.append(None)
                fallback.append(j)
                continue
            pv, dv, _ = certify(A, B[:, j], lam, res.x, res.y)
            viol = max(0.0, float(np.abs(A @ res.x - B[:, j]).max(initial=0.0)) - lam)
            reports.append(SolveReport(
                solution=res.x,
                iterations=res.steps,
                primal_residual=pv,
                dual_residual=dv,
                converged=True,
                objective=float(np.abs(res.x).sum()),
                violation=viol * self._scale,
                polished=True,
                primal_threshold=np.sqrt(sum(A.shape)) * cfg.tol_primal,
                dual_threshold=np.sqrt(A.shape[1]) * cfg.tol_dual,
            ))
        if fallback:
            log.info("homotopy broke down on %d column(s); using ADMM", len(fallback))
            X0f = None if X0 is None else np.asarray(X0, dtype=float).reshape(A.shape[1], -1)[:, fallback]
            for j, rep in zip(fallback, self._solve_admm(B[:, fallback], lam, lam_orig, X0f)):
                reports[j] = rep
        return reports

    def _finish(self, b, lam, w, u, iters, res, thr, converged, pre) -> SolveReport:
        rp, rd = res
        tp, td = thr
        A, cfg = self._As, self.cfg
        sol, is_polished = w.copy(), False
        if pre is None and cfg.polish:
            cand, kkt = _polish(A, b, lam, w, u)
            if kkt is not None:
                pre = (cand, kkt)
            elif cand is not None:
                slack = 10 * max(cfg.tol_primal, cfg.tol_dual) * (1 + np.abs(w).sum())
                if np.abs(cand).sum() <= np.abs(w).sum() + slack:
                    sol, is_polished = cand, True
        if pre is not None:
            # Certified vertex: report its own KKT residuals.
            sol, is_polished = pre[0], True
            rp, rd = pre[1]
            tp = min(tp, np.sqrt(sum(self._As.shape)) * cfg.tol_primal)
            td = min(td, np.sqrt(self._As.shape[1]) * cfg.tol_dual)
            converged = True
        viol = max(0.0, float(np.abs(A @ sol - b).max(initial=0.0) - lam)) * self._scale
        return SolveReport(
            solution=sol,
            iterations=iters,
            primal_residual=rp,
            dual_residual=rd,
            converged=converged,
            objective=float(np.abs(sol).sum()),
            violation=float(viol),
            polished=is_polished,
            primal_threshold=float(tp),
            dual_threshold=float(td),
        )


def _farkas(A, B, lam, du, anorm, tol=1e-6) -> NDArray:
    """Columns whose dual increment ``du`` is (numerically) an infeasibility certificate.

    ``y`` certifies emptiness of ``{x : |A x - b| <= lam}`` when ``A^T y = 0``
    and ``|b . y| > lam * ||y||_1``.
    """
    n1 = np.abs(du).sum(0)
    ninf = np.abs(du).max(axis=0, initial=0.0)
    big = ninf > 1e-10 * (1.0 + np.abs(B).max(axis=0, initial=0.0))
    orth = np.abs(A.T @ du).max(axis=0, initial=0.0) <= tol * anorm * n1
    gap = np.abs((B * du).sum(0)) - lam * n1
    return big & orth & (gap > tol * n1 * (1.0 + np.abs(B).max(axis=0, initial=0.0)))


def _lsq(M: NDArray, r: NDArray) -> NDArray:
    """Solve ``M c = r``: LU for square nonsingular ``M``, least squares otherwise."""
    if M.shape[0] == M.shape[1]:
        try:
            return np.linalg.solve(M, r)
        except np.linalg.LinAlgError:
            pass
    return np.linalg.lstsq(M, r, rcond=None)[0]


def _certificate(A, act, sgn, support, coef, tol=1e-9) -> float | None:
    """Dual certificate for a candidate vertex; returns the stationarity residual.

    ``y`` lives on the active rows, carries the sign opposite to each active
    side, and ``A_T^T y`` must lie in the l1 subdifferential at the candidate.
    """
    AT = A[act]
    target = np.sign(coef)
    y = _lsq(AT[:, support].T, target)
    stat = float(np.abs(AT[:, support].T @ y - target).max())
    if stat > tol or np.any(y * sgn > tol):
        return None
    if np.abs(AT.T @ y).max() > 1 + tol:
        return None
    return stat


def _polish(A, b, lam, w, u, seen: set | None = None):
    """Exact vertex from guesses of the active set.

    Returns ``(candidate, kkt)`` where ``kkt`` is ``(primal, dual)`` residuals
    when the candidate carries a dual optimality certificate, else None.
    Guesses already in ``seen`` (from earlier calls) are skipped and new ones
    are added to it.
    """
    support = np.flatnonzero(w != 0)
    m = A.shape[1]
    bmax = np.abs(b).max(initial=0.0)
    scale = 1.0 + bmax + lam
    if support.size == 0:
        if bmax <= lam:
            return np.zeros(m), (0.0, 0.0)
        return None, None
    resid = A @ w - b
    slack = lam - np.abs(resid)
    umax = np.abs(u).max(initial=0.0)
    guesses = []
    if umax > 0:
        act = np.flatnonzero(np.abs(u) > 1e-8 * umax)
        guesses.append((act, np.sign(u[act])))
    for delta in (1e-9, 1e-7, 1e-5, 1e-3):
        act = np.flatnonzero(slack <= delta * scale)
        guesses.append((act, np.sign(resid[act])))
    # A nondegenerate vertex has exactly |support| active rows.
    ns = min(support.size, A.shape[0])
    act = np.sort(np.argsort(slack, kind="stable")[:ns])
    guesses.append((act, np.sign(resid[act])))
    if umax > 0:
        act = np.sort(np.argsort(-np.abs(u), kind="stable")[:ns])
        guesses.append((act, np.sign(u[act])))
    best, best_obj = None, np.inf
    seen = set() if seen is None else seen
    sup_key = support.tobytes() + np.sign(w[support]).tobytes()
    for act, sgn in guesses:
        keep = sgn != 0
        act, sgn = act[keep], sgn[keep]
        key = (sup_key, act.tobytes(), sgn.tobytes())
        if act.size == 0 or key in seen:
            continue
        seen.add(key)
        sub = A[np.ix_(act, support)]
        coef = _lsq(sub, b[act] + sgn * lam)
        if not np.all(np.sign(coef) == np.sign(w[support])):
            continue
        cand = np.zeros(m)
        cand[support] = coef
        r_c = A @ cand - b
        viol = np.abs(r_c).max() - lam
        if viol > 1e-11 * scale:
            continue
        if np.abs(r_c[act] - sgn * lam).max() > 1e-9 * scale:
            continue  # guessed rows are not actually on the boundary
        stat = _certificate(A, act, sgn, support, coef)
        if stat is not None:
            return cand, (max(0.0, float(viol)), stat)
        obj = np.abs(coef).sum()
        if obj < best_obj:
            best, best_obj = cand, obj
    return best, None


def solve_l1_linf(
    A: ArrayLike,
    b: ArrayLike,
    lam: float,
    cfg: SolverConfig | None = None,
    x0: ArrayLike | None = None,
) -> SolveReport:
    """Minimize ``||x||_1`` subject to ``||A x - b||_inf <= lam`` by ADMM.

    Non-convergence is reported through ``SolveReport.converged``; an
    apparently empty feasible set raises :class:`InfeasibleError`.
    """
    return L1LinfSolver(A, cfg).solve(b, lam, x0)


# --------------------------------------------------------------------------
# Exact LP oracle
# --------------------------------------------------------------------------

_PIVOT_TOL = 1e-11


def _simplex_phase(T: NDArray, basis: list[int], ncols: int) -> None:
    """Minimize the objective in the last row of tableau ``T`` in place.

    Bland's rule: entering column is the lowest index with a negative
    reduced cost, leaving row is the minimum ratio with ties broken by the
    lowest basic variable index.
    """
    while True:
        obj = T[-1, :ncols]
        entering = next((j for j in range(ncols) if obj[j] < -_PIVOT_TOL), None)
        if entering is None:
            return
        col = T[:-1, entering]
        best, leave = None, None
        for i in np.flatnonzero(col > _PIVOT_TOL):
            ratio = T[i, -1] / col[i]
            if (best is None or ratio < best - _PIVOT_TOL
                    or (abs(ratio - best) <= _PIVOT_TOL and basis[i] < basis[leave])):
                best, leave = ratio, i
        if leave is None:
            raise ValueError("LP is unbounded")
        T[leave] /= T[leave, entering]
        for i in range(T.shape[0]):
            if i != leave and T[i, entering] != 0.0:
                T[i] -= T[i, entering] * T[leave]
        basis[leave] = entering


def _simplex(c: NDArray, G: NDArray, h: NDArray) -> NDArray:
    """Two-phase dense simplex for ``min c.v  s.t.  G v <= h, v >= 0``."""
    rows, nv = G.shape
    # Slack per row; rows with negative rhs are negated and get an artificial.
    sign = np.where(h < 0, -1.0, 1.0)
    n_art = int((h < 0).sum())
    ncols = nv + rows + n_art
    T = np.zeros((rows + 1, ncols + 1))
    T[:rows, :nv] = G * sign[:, None]
    T[:rows, nv:nv + rows] = np.diag(sign)
    T[:rows, -1] = h * sign
    basis = []
    a = nv + rows
    art_cols = []
    for i in range(rows):
        if sign[i] < 0:
            T[i, a] = 1.0
            basis.append(a)
            art_cols.append(a)
            a += 1
        else:
            basis.append(nv + i)

    if n_art:
        T[-1, :] = 0.0
        T[-1, art_cols] = 1.0
        for i in range(rows):
            if basis[i] in art_cols:
                T[-1] -= T[i]
        _simplex_phase(T, basis, ncols)
        if -T[-1, -1] > 1e-9 * (1 + np.abs(h).max()):
            raise ValueError("infeasible")
        # Drive remaining (zero-level) artificials out of the basis.
        for i in range(rows):
            if basis[i] in art_cols:
                piv = next((j for j in range(nv + rows) if abs(T[i, j]) > _PIVOT_TOL), None)
                if piv is not None:
                    T[i] /= T[i, piv]
                    for r in range(rows + 1):
                        if r != i:
                            T[r] -= T[r, piv] * T[i]
                    basis[i] = piv
        T[:, nv + rows:ncols] = 0.0

    T[-1, :] = 0.0
    T[-1, :nv] = c
    for i in range(rows):
        if T[-1, basis[i]] != 0.0:
            T[-1] -= T[-1, basis[i]] * T[i]
    _simplex_phase(T, basis, nv + rows)
    v = np.zeros(ncols)
    for i, bvar in enumerate(basis):
        v[bvar] = T[i, -1]
    return v[:nv]


def lp_oracle(A: ArrayLike, b: ArrayLike, lam: float) -> NDArray[np.float64]:
    """Exact solution of the l1 / l-infinity problem by the simplex method.

    Uses the split ``x = xp - xm`` with ``xp, xm >= 0``. Intended for small
    test instances (at most 12 unknowns).
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    k, m = A.shape
    if m > 12:
        raise ValueError("lp_oracle is limited to at most 12 unknowns")
    if not lam >= 0:
        raise ValueError("lambda must be >= 0")
    G = np.block([[A, -A], [-A, A]])
    h = np.concatenate([b + lam, lam - b])
    v = _simplex(np.ones(2 * m), G, h)
    return v[:m] - v[m:]
