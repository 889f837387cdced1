"""JSON-configured experiment runner used by ``missreg simulate`` and scripts/.

A config names one experiment (``coverage``, ``normality`` or
``rate-sweep``) and its model; results are written as a JSON report plus CSV
tables into an output directory.
"""

from __future__ import annotations

import json
import math
from dataclasses import replace
from pathlib import Path
from typing import Any

import numpy as np

from .clime import ClimeConfig
from .dantzig import DantzigConfig
from .io import write_rows
from .simulation import (
    LAMBDA_CONSTANT,
    NU_CONSTANT,
    TABLE_GROUPS,
    InferenceSettings,
    make_model,
    rate_sweep_config,
    run_coverage,
    run_normality,
    run_rate_sweep,
)
from .solver import SolverConfig

EXPERIMENTS = ("coverage", "normality", "rate-sweep")

# Tuning used when a config does not override it; see the README for how the
# constants were chosen.
DEFAULT_TUNING: dict[str, Any] = {
    "lambda_constant": LAMBDA_CONSTANT,
    "lambda_rate": "shared",
    "beta_norm": "stage1",
    "nu_constant": NU_CONSTANT,
    "b1": 2.0,
    "solver": "homotopy",
    "two_stage": False,
}

DEFAULTS: dict[str, Any] = {
    "experiment": "coverage",
    "n": 1000,
    "p": 200,
    "s": 10,
    "rho": 0.9,
    "sigma_eps": 0.1,
    "T": 200,
    "alpha": 0.05,
    "seed": 42,
    "estimator": "unknown",
    "rho_grid": [0.5, 0.6, 0.7, 0.8, 0.9],
    "coords": None,
    "redraw_beta": False,
    "full": False,
    "full_overrides": {"T": 1000},
    "tuning": {},
}


def load_config(path: str | Path) -> dict:
    cfg = json.loads(Path(path).read_text())
    if not isinstance(cfg, dict):
        raise ValueError("config must be a JSON object")
    return cfg


def resolve_config(cfg: dict) -> dict:
    unknown = set(cfg) - set(DEFAULTS)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    out = {**DEFAULTS, **cfg}
    out["tuning"] = {**DEFAULT_TUNING, **cfg.get("tuning", {})}
    if out["full"]:
        out.update(out["full_overrides"])
    if out["experiment"] not in EXPERIMENTS:
        raise ValueError(f"experiment must be one of {EXPERIMENTS}")
    return out


def inference_settings(tuning: dict, model) -> InferenceSettings:
    solver = SolverConfig(method=tuning["solver"])
    lam = tuning.get("lambda", "auto")
    bn = model.signal_norm if tuning["beta_norm"] == "true" else None
    dcfg = DantzigConfig(lam=lam, auto_constant=tuning["lambda_constant"], beta_norm_guess=bn,
                         rate=tuning["lambda_rate"], solver=solver)
    ccfg = ClimeConfig(nu=tuning.get("nu", "auto"), auto_constant=tuning["nu_constant"],
                       b1_guess=tuning["b1"], solver=solver)
    return InferenceSettings(dcfg, ccfg, two_stage=bool(tuning["two_stage"]),
                             plugin_noise=bool(tuning.get("plugin_noise", False)))


def _f(v: float) -> float | None:
    return None if v is None or (isinstance(v, float) and math.isnan(v)) else float(v)


def run_experiment(cfg: dict, out_dir: str | Path, workers: int | None = None) -> dict:
    cfg = resolve_config(cfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = make_model(cfg["p"], cfg["s"], cfg["rho"], cfg["sigma_eps"], seed=cfg["seed"])
    settings = inference_settings(cfg["tuning"], model)
    summary: dict[str, Any] = {"config": cfg, "support": list(model.support),
                               "beta_star": model.beta_star[list(model.support)].tolist()}
    exp = cfg["experiment"]
    if exp == "coverage":
        rep = run_coverage(model, cfg["n"], cfg["T"], cfg["alpha"], cfg["seed"], settings=settings,
                           coords=cfg["coords"], workers=workers, redraw_beta=cfg["redraw_beta"])
        row = rep.table_row()
        summary.update({
            "table": {k: _f(v) for k, v in row.items()},
            "groups": {k: list(v) for k, v in rep.groups.items()},
            "failures": rep.failures,
            "failure_stages": rep.failure_stages,
            "T": rep.T,
        })
        if rep.redraw_beta:
            summary["redraw_group_means"] = rep.meta["redraw_group_means"]
        header = []
        vals = []
        for g in TABLE_GROUPS:
            header += [f"avgcov[{g}]", f"avglen[{g}]"]
            vals += [row[f"avgcov[{g}]"], row[f"avglen[{g}]"]]
        write_rows(out_dir / "table.csv", ["n", "p", "rho"] + header,
                   [[cfg["n"], cfg["p"], float(cfg["rho"])] + [float(v) for v in vals]])
        write_rows(out_dir / "per_coordinate.csv", ["coord", "in_support", "avgcov", "avglen"],
                   [[j, int(j in model.support), float(c), float(l)]
                    for j, c, l in zip(rep.coords, rep.avgcov, rep.avglen)])
        sel = [rep.coords.index(rep.groups[g][0]) for g in TABLE_GROUPS[:2] if rep.groups[g]]
        write_rows(out_dir / "delta.csv", ["replication"] + [str(rep.coords[k]) for k in sel],
                   [[t] + [float(rep.delta[t, k]) for k in sel] for t in range(rep.T)])
    elif exp == "normality":
        coords = cfg["coords"]
        if coords is None:
            rng = np.random.default_rng(np.random.SeedSequence([cfg["seed"], 2]))
            off = [j for j in range(model.p) if j not in model.support]
            coords = [int(rng.choice(model.support)), int(rng.choice(off))]
        rep = run_normality(model, cfg["n"], cfg["T"], coords, cfg["seed"], settings=settings,
                            workers=workers)
        summary.update({
            "coords": list(rep.coords),
            "ks_statistic": rep.ks_statistic.tolist(),
            "ks_pvalue": rep.ks_pvalue.tolist(),
            "failures": rep.failures,
            "T": rep.T,
        })
        write_rows(out_dir / "delta.csv", ["replication"] + [str(c) for c in rep.coords],
                   [[t] + [float(v) for v in rep.delta[t]] for t in range(rep.T)])
        edges, counts = rep.histogram()
        write_rows(out_dir / "histogram.csv", ["lower", "upper"] + [str(c) for c in rep.coords],
                   [[float(edges[b]), float(edges[b + 1])] + [int(c) for c in counts[:, b]]
                    for b in range(len(edges) - 1)])
    else:
        known = cfg["estimator"] == "known"
        dcfg = rate_sweep_config(model)
        dcfg = replace(dcfg, solver=SolverConfig(method=cfg["tuning"]["solver"]))
        rep = run_rate_sweep(model, cfg["n"], cfg["rho_grid"], cfg["T"], cfg["seed"], known,
                             cfg=dcfg, workers=workers)
        summary.update({
            "estimator": cfg["estimator"],
            "rho_grid": list(rep.rho_grid),
            "median_error": rep.median_error.tolist(),
            "slope": _f(rep.slope),
            "failures": rep.failures,
            "T": rep.T,
        })
        write_rows(out_dir / "rate_sweep.csv", ["rho", "inv_rho", "median_l2_error"],
                   [[r, 1.0 / r, float(e)] for r, e in zip(rep.rho_grid, rep.median_error)])
    (out_dir / "report.json").write_text(json.dumps(summary, indent=2, sort_keys=True, default=str) + "\n")
    return summary
