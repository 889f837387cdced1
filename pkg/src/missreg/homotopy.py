"""Exact path-following solver for ``minimize ||x||_1  s.t.  ||A x - b||_inf <= lam``.

The problem is a linear program whose right-hand side moves linearly with
``lam``. Starting from ``lam = ||b||_inf`` (where ``x = 0`` is optimal) the
optimal basis is followed downwards. A basis is a set ``T`` of nonzero
coefficients with signs ``z`` and an equally large set ``S`` of tight rows
with sides ``s`` such that ``B = A[S, T]`` is nonsingular. Along one piece

    x_T(lam) = B^{-1} (b_S - lam s)        (primal, linear in lam)
    y_S      = B^{-T} z                    (dual, constant)

and the piece ends when a loose row reaches the boundary or a coefficient
reaches zero. Each such event is resolved by one dual-simplex pivot: the
dual moves along the direction that frees the event, and the ratio test
picks either a new coefficient (``|A^T y|_j`` reaches 1) or a row whose
multiplier reaches zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import lu_factor, lu_solve


class PathInfeasible(ValueError):
    """No feasible point exists below ``lam_min``."""

    def __init__(self, lam_min: float):
        super().__init__(f"constraint set is empty for lambda < {lam_min:.6g}")
        self.lam_min = lam_min


@dataclass(frozen=True)
class HomotopyResult:
    x: NDArray[np.float64]
    y: NDArray[np.float64]  # dual multipliers, one per row
    steps: int
    ok: bool  # False when the step budget ran out or the basis broke down


def _ratio(c: NDArray, dc: NDArray, tol: float) -> NDArray:
    """Step ``theta >= 0`` at which ``|c + theta dc|`` reaches 1 (inf if never)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        th = (1.0 - c * np.sign(dc)) / np.abs(dc)
    th[np.abs(dc) <= tol] = np.inf
    return np.maximum(th, 0.0)


def homotopy_solve(A: NDArray, b: NDArray, lam: float, max_steps: int | None = None,
                   tol: float = 1e-12) -> HomotopyResult:
    k, m = A.shape
    b = np.asarray(b, dtype=float)
    bmax = float(np.abs(b).max(initial=0.0))
    x = np.zeros(m)
    if bmax <= lam:
        return HomotopyResult(x, np.zeros(k), 0, True)
    if max_steps is None:
        max_steps = 20 * (k + m) + 100
    scale = 1.0 + bmax
    anorm = max(float(np.abs(A).max(initial=0.0)), 1e-300)

    # First piece: the largest |b_i| becomes tight; the dual on that row grows
    # until some column of A^T y reaches 1.
    i0 = int(np.argmax(np.abs(b)))
    s0 = float(np.sign(b[i0]))
    row = A[i0]
    j0 = int(np.argmax(np.abs(row)))
    if abs(row[j0]) <= tol * anorm:
        raise PathInfeasible(bmax)
    S = [i0]
    s = [s0]
    T = [j0]
    z = [float(np.sign(s0 * row[j0]))]
    cur = bmax
    recent: tuple = ()

    for step in range(1, max_steps + 1):
        Si = np.array(S)
        Ti = np.array(T)
        sv = np.array(s)
        zv = np.array(z)
        try:
            lu = lu_factor(A[np.ix_(Si, Ti)], check_finite=False)
        except (np.linalg.LinAlgError, ValueError):
            return _fail(A, b, Si, Ti, sv, zv, lam, m, k, step)
        piv = np.abs(np.diag(lu[0]))
        if piv.min(initial=np.inf) <= 1e-13 * max(piv.max(initial=0.0), 1e-300):
            return _fail(A, b, Si, Ti, sv, zv, lam, m, k, step)
        xb = lu_solve(lu, b[Si], check_finite=False)
        d = lu_solve(lu, sv, check_finite=False)
        y = lu_solve(lu, zv, trans=1, check_finite=False)
        AT = A[:, Ti]
        r0 = b - AT @ xb
        g = AT @ d  # residual along the piece: r(l) = r0 + l g

        # Next event below `cur`: a loose row hits a side, or a coefficient hits 0.
        # Events within roundoff of the target are not resolved.
        best = lam + tol * scale
        event = None
        loose = np.ones(k, dtype=bool)
        loose[Si] = False
        for side in (1.0, -1.0):
            den = 1.0 - side * g
            with np.errstate(divide="ignore", invalid="ignore"):
                lv = side * r0 / den
            ok = loose & (den > tol) & (lv > best)
            if ("row", side) == recent[:2]:
                ok[recent[2]] = ok[recent[2]] & (lv[recent[2]] < cur - 1e-12 * scale)
            if ok.any():
                i = int(np.flatnonzero(ok)[np.argmax(lv[ok])])
                best = float(min(lv[i], cur))
                event = ("row", i, side)
        with np.errstate(divide="ignore", invalid="ignore"):
            lz = xb / d
        okz = (zv * d < -tol) & (lz > best)
        if okz.any():
            kk = int(np.flatnonzero(okz)[np.argmax(lz[okz])])
            best = float(min(lz[kk], cur))
            event = ("zero", kk)
        if event is None:
            x = np.zeros(m)
            x[Ti] = xb - lam * d
            yy = np.zeros(k)
            yy[Si] = y
            return HomotopyResult(x, yy, step, True)
        cur = best

        c = A[Si].T @ y  # A^T y over all columns
        if event[0] == "row":
            _, i, side = event
            dyS = -lu_solve(lu, side * A[i, Ti], trans=1, check_finite=False)
            dc = A[Si].T @ dyS + side * A[i]
            dc[Ti] = 0.0
            th_col = _ratio(c, dc, tol * anorm)
            th_col[Ti] = np.inf
            with np.errstate(divide="ignore", invalid="ignore"):
                th_row = np.where(y * dyS < 0, -y / dyS, np.inf)
            jc = int(np.argmin(th_col))
            jr = int(np.argmin(th_row)) if th_row.size else -1
            tc = th_col[jc]
            tr = th_row[jr] if jr >= 0 else np.inf
            if not np.isfinite(min(tc, tr)):
                raise PathInfeasible(cur)
            S.append(i)
            s.append(side)
            if tc <= tr:
                T.append(jc)
                z.append(float(np.sign(dc[jc])))
                recent = ()
            else:
                del S[jr], s[jr]
                recent = ("row", float(sv[jr]), int(Si[jr]))
        else:
            kk = event[1]
            dyS = -lu_solve(lu, zv[kk] * np.eye(len(T))[kk], trans=1, check_finite=False)
            dc = A[Si].T @ dyS
            mask_t = np.zeros(m, dtype=bool)
            mask_t[Ti] = True
            mask_t[Ti[kk]] = False
            th_col = _ratio(c, dc, tol * anorm)
            th_col[mask_t] = np.inf
            # The coefficient just removed may only return with the other sign.
            th_col[Ti[kk]] = np.inf if abs(dc[Ti[kk]]) <= tol else 2.0 / abs(dc[Ti[kk]])
            with np.errstate(divide="ignore", invalid="ignore"):
                th_row = np.where(y * dyS < 0, -y / dyS, np.inf)
            jc = int(np.argmin(th_col))
            jr = int(np.argmin(th_row))
            tc, tr = th_col[jc], th_row[jr]
            del T[kk], z[kk]
            if tc <= tr and np.isfinite(tc):
                T.append(jc)
                z.append(float(np.sign(dc[jc])))
            elif np.isfinite(tr):
                del S[jr], s[jr]
            else:
                return _fail(A, b, Si, Ti, sv, zv, lam, m, k, step)
            recent = ()
        if not S:
            # Back at the origin basis; cannot happen for a descending path.
            return _fail(A, b, Si, Ti, sv, zv, lam, m, k, step)

    return _fail(A, b, np.array(S), np.array(T), np.array(s), np.array(z), lam, m, k, max_steps)


def _fail(A, b, Si, Ti, sv, zv, lam, m, k, steps) -> HomotopyResult:
    return HomotopyResult(np.zeros(m), np.zeros(k), steps, False)


def certify(A: NDArray, b: NDArray, lam: float, x: NDArray, y: NDArray,
            tol: float = 1e-9) -> tuple[float, float, float]:
    """``(primal violation, dual violation, duality gap)``, all relative to the data scale."""
    scale = 1.0 + float(np.abs(b).max(initial=0.0))
    pv = max(0.0, float(np.abs(A @ x - b).max(initial=0.0)) - lam) / scale
    dv = max(0.0, float(np.abs(A.T @ y).max(initial=0.0)) - 1.0)
    primal = float(np.abs(x).sum())
    dual = float(b @ y - lam * np.abs(y).sum())
    gap = abs(primal - dual) / (1.0 + abs(primal))
    return pv, dv, gap
