"""Coverage and interval length over a grid of explicit (lambda, nu) values.

Each replication fits the pilot once per lambda and the precision rows once
per nu, then scores every pair. Used to pick the constants in
``missreg.simulation``.

    python scripts/tuning_grid.py --p 200 --n 1000 --rho 0.9 --T 25 \
        --lambdas 0.04,0.07,0.1 --nus 0.03,0.05,0.07 --seed 11
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from missreg import ClimeConfig, DantzigConfig, SolverConfig, fit, fit_clime, generate, make_model
from missreg.design import surrogate_moments
from missreg.inference import confidence_intervals, debias, sandwich_diag
from missreg.simulation import replication_seed


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",")]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--p", type=int, default=200)
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--s", type=int, default=10)
    ap.add_argument("--rho", type=float, default=0.9)
    ap.add_argument("--T", type=int, default=25)
    ap.add_argument("--seed", type=int, default=11)
    ap.add_argument("--lambdas", type=_floats, required=True)
    ap.add_argument("--nus", type=_floats, required=True)
    args = ap.parse_args()

    exact = SolverConfig(method="homotopy")
    m = make_model(args.p, args.s, args.rho, seed=args.seed)
    sup = np.zeros(args.p, dtype=bool)
    sup[list(m.support)] = True
    acc: dict[tuple[float, float], list] = {}
    t0 = time.perf_counter()
    for t in range(args.T):
        d, y, _ = generate(m, args.n, replication_seed(args.seed, t))
        mo = surrogate_moments(d, y)
        fits = {lam: fit(mo, m.noise(), DantzigConfig(lam=lam, solver=exact)) for lam in args.lambdas}
        for nu in args.nus:
            pr = fit_clime(mo.sigma, ClimeConfig(nu=nu, solver=exact))
            rows = pr.rows(range(args.p))
            for lam, f in fits.items():
                bu = debias(f, pr, mo)
                ci = confidence_intervals(bu, sandwich_diag(d, m.sigma_eps, f.beta, rows), args.n, 0.05)
                cov = (ci[:, 0] <= m.beta_star) & (m.beta_star <= ci[:, 1])
                length = ci[:, 1] - ci[:, 0]
                acc.setdefault((lam, nu), []).append(
                    (cov[sup].mean(), cov[~sup].mean(), length[sup].mean(), length[~sup].mean()))
    print(f"{args.T} replications in {time.perf_counter() - t0:.0f}s")
    print("lambda      nu   cov(J0)  cov(J0c)  len(J0)  len(J0c)")
    for (lam, nu), v in sorted(acc.items()):
        c0, c1, l0, l1 = np.mean(v, axis=0)
        print(f"{lam:6.3f}  {nu:6.3f}  {c0:7.3f}  {c1:8.3f}  {l0:7.3f}  {l1:8.3f}")


if __name__ == "__main__":
    main()
