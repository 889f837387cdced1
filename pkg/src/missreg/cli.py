"""Command line for sparse regression with missing covariates.

Exit status: 0 on success, 1 on usage or input errors, 2 on numerical
failures (infeasibility, non-convergence). Failures print one JSON object
``{"error", "stage", "type"}`` on standard error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .clime import ClimeConfig, fit_clime
from .dantzig import DantzigConfig, RegressionFit, fit, fit_auto
from .design import (
    IncompleteDesign,
    MomentKind,
    NoiseSpec,
    from_raw,
    known_moments,
    surrogate_covariance,
    surrogate_moments,
)
from .inference import StageError, default_sigma_x, run_inference
from .io import DataError, read_matrix, read_rates, read_regression, write_matrix, write_rows
from .solver import InfeasibleError, SolveReport, SolverConfig

DEFAULT_SEED = 42


class UsageError(Exception):
    pass


class NumericalError(Exception):
    def __init__(self, message: str, stage: str):
        super().__init__(message)
        self.stage = stage


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse exits with 2 by default
        self.print_usage(sys.stderr)
        raise UsageError(message)


# --------------------------------------------------------------------------
# Shared helpers
# --------------------------------------------------------------------------

def _positive_or_auto(text: str) -> float | str:
    if text == "auto":
        return "auto"
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("expected 'auto' or a positive number") from None
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _provenance(args: argparse.Namespace, config: dict) -> dict:
    return {"version": __version__, "seed": args.seed, "config_hash": config_hash(config)}


def _jsonable(v: Any) -> Any:
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return None if math.isnan(f) else f
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if hasattr(v, "value") and hasattr(v, "name"):  # enums
        return v.value
    return v


def _emit(obj: dict, out: str | None) -> None:
    text = json.dumps(_jsonable(obj), indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _load_design(args) -> tuple[list[str], IncompleteDesign, np.ndarray | None]:
    names, X, y = read_regression(args.input, getattr(args, "response", None))
    rates = read_rates(args.rates, X.shape[1]) if args.rates else None
    try:
        d = from_raw(X, rates)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    return names, d, y


def _noise(args, d: IncompleteDesign) -> tuple[NoiseSpec, bool]:
    sx = args.sigma_x
    heuristic = sx is None
    if heuristic:
        sx = default_sigma_x(d)
    se = getattr(args, "sigma_eps", None) or 0.0
    return NoiseSpec(se, sx), heuristic


def _solver(args) -> SolverConfig:
    return SolverConfig(method=args.solver, max_iters=args.max_iters)


def _dantzig_cfg(args) -> DantzigConfig:
    return DantzigConfig(
        lam=args.lam,
        auto_constant=args.lambda_constant,
        beta_norm_guess=args.beta_norm,
        rate=args.rate,
        solver=_solver(args),
    )


def _run_dantzig(moments, noise, cfg: DantzigConfig, two_stage: bool) -> RegressionFit:
    try:
        return (fit_auto if two_stage else fit)(moments, noise, cfg)
    except InfeasibleError as exc:
        raise NumericalError(str(exc), "dantzig") from exc
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _coords(text: str | None, names: list[str]) -> tuple[int, ...] | None:
    """Comma-separated column names or 0-based covariate indices."""
    if text is None:
        return None
    out = []
    for tok in (t.strip() for t in text.split(",") if t.strip()):
        if tok in names:
            out.append(names.index(tok))
        elif tok.isdigit() and int(tok) < len(names):
            out.append(int(tok))
        else:
            raise UsageError(f"unknown coordinate {tok!r}")
    if not out:
        raise UsageError("empty coordinate list")
    return tuple(out)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=_seed, default=DEFAULT_SEED, help="recorded in outputs (default 42)")
    p.add_argument("--out", help="write the JSON report here instead of standard output")


def _data_args(p: argparse.ArgumentParser, response: bool = True) -> None:
    p.add_argument("--input", required=True, help="CSV with a header row; missing entries are NA")
    if response:
        p.add_argument("--response", required=True, help="name of the response column")
    else:
        p.add_argument("--response", help="response column to exclude from the covariates")
    p.add_argument("--rates", help="one-line CSV of observation rates (default: observed fractions)")
    p.add_argument("--sigma-x", type=float, help="covariate scale (default: max column std of the scaled design)")
    p.add_argument("--solver", choices=("admm", "homotopy"), default="admm")
    p.add_argument("--max-iters", type=int, default=20000)


def _dantzig_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lambda", dest="lam", type=_positive_or_auto, default="auto")
    p.add_argument("--lambda-constant", type=float, default=1.0)
    p.add_argument("--beta-norm", type=float, help="norm of beta used by automatic lambda")
    p.add_argument("--rate", choices=("shared", "by-kind"), default="shared")
    p.add_argument("--single-stage", action="store_true",
                   help="skip the second automatic-lambda stage")
    p.add_argument("--sigma-eps", type=float, help="noise level (required for automatic lambda)")


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------

def cmd_fit(args) -> int:
    names, d, y = _load_design(args)
    if args.lam == "auto" and not (args.sigma_eps and args.sigma_eps > 0):
        raise UsageError("automatic lambda needs --sigma-eps > 0")
    noise, heuristic = _noise(args, d)
    if args.known_sigma:
        moments = known_moments(d, y, read_matrix(args.known_sigma, d.p))
    else:
        moments = surrogate_moments(d, y)
    cfg = _dantzig_cfg(args)
    res = _run_dantzig(moments, noise, cfg, not args.single_stage)
    config = {"command": "fit", "input": str(args.input), "response": args.response,
              "rates": args.rates, "known_sigma": args.known_sigma, "dantzig": asdict(cfg),
              "two_stage": not args.single_stage, "sigma_eps": noise.sigma_eps, "sigma_x": noise.sigma_x}
    report = {
        "beta": res.beta,
        "names": names,
        "lambda_used": res.lambda_used,
        "kind": res.kind.value,
        "diagnostics": {
            **res.report.as_dict(),
            "constraint_gap": res.constraint_gap(moments),
            "meta": res.meta,
            "n": d.n, "p": d.p, "rho_star": d.rho_star(),
            "rates_estimated": d.rates_estimated,
            "sigma_x": noise.sigma_x, "sigma_x_heuristic": heuristic,
        },
        **_provenance(args, config),
    }
    _emit(report, args.out)
    if args.csv:
        write_rows(args.csv, ["name", "beta"], [[n, float(b)] for n, b in zip(names, res.beta)])
    if not res.report.converged:
        raise NumericalError("solver did not converge: increase --max-iters", "dantzig")
    return 0


def cmd_precision(args) -> int:
    names, d, _ = _load_design(args)
    noise, heuristic = _noise(args, d)
    cfg = ClimeConfig(nu=args.nu, auto_constant=args.nu_constant, b1_guess=args.b1,
                      symmetrize=not args.no_symmetrize, solver=_solver(args))
    moments_sigma = surrogate_covariance(d)
    try:
        pf = fit_clime(moments_sigma, cfg, n=d.n, rho_star=d.rho_star(), sigma_x=noise.sigma_x)
    except InfeasibleError as exc:
        raise NumericalError(str(exc), "clime") from exc
    write_matrix(args.theta, pf.theta, names)
    config = {"command": "precision", "input": str(args.input), "rates": args.rates,
              "clime": asdict(cfg), "sigma_x": noise.sigma_x}
    report = {
        "theta_csv": str(args.theta),
        "nu_used": pf.nu_used,
        "b1_guess": args.b1,
        "symmetrized": pf.symmetrized,
        "converged": all(r.converged for r in pf.column_reports),
        "sigma_x": noise.sigma_x, "sigma_x_heuristic": heuristic,
        "rates_estimated": d.rates_estimated,
        **_provenance(args, config),
    }
    _emit(report, args.out)
    if not report["converged"]:
        raise NumericalError("some CLIME columns did not converge: increase --max-iters", "clime")
    return 0


def _pilot_from(path: str, p: int) -> RegressionFit:
    try:
        data = json.loads(Path(path).read_text())
        beta = np.array(data["beta"], dtype=float)
        lam = float(data["lambda_used"])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DataError(f"{path}: not a fit report ({exc})") from exc
    if beta.shape != (p,):
        raise DataError(f"{path}: beta has length {beta.size}, expected {p}")
    diag = data.get("diagnostics", {})
    rep = SolveReport(beta, int(diag.get("iterations", 0)), float(diag.get("primal_residual", 0.0)),
                      float(diag.get("dual_residual", 0.0)), bool(diag.get("converged", True)),
                      float(np.abs(beta).sum()))
    return RegressionFit(beta, lam, MomentKind.SURROGATE_UNKNOWN, rep, diag.get("meta", {}))


def cmd_ci(args) -> int:
    names, d, y = _load_design(args)
    if args.sigma_eps is None or not args.sigma_eps > 0:
        raise UsageError("ci needs --sigma-eps > 0")
    noise, heuristic = _noise(args, d)
    coords = _coords(args.coords, names)
    dcfg = _dantzig_cfg(args)
    ccfg = ClimeConfig(nu=args.nu, auto_constant=args.nu_constant, b1_guess=args.b1,
                       solver=_solver(args))
    pilot = _pilot_from(args.beta_from, d.p) if args.beta_from else None
    if pilot is None:
        pilot = _run_dantzig(surrogate_moments(d, y), noise, dcfg, not args.single_stage)
    try:
        res = run_inference(d, y, noise, dcfg, ccfg, coords, args.alpha,
                            plugin_noise=args.plugin_noise, pilot=pilot)
    except StageError as exc:
        if isinstance(exc.cause, InfeasibleError) or isinstance(exc.cause, ArithmeticError):
            raise NumericalError(str(exc.cause), exc.stage) from exc
        if exc.stage == "inference":
            raise NumericalError(str(exc.cause), exc.stage) from exc
        raise UsageError(str(exc)) from exc
    rows = []
    for k, j in enumerate(res.coords):
        lo, hi = res.intervals[k]
        rows.append([j, names[j], float(res.beta_debiased[j]), float(lo), float(hi), float(res.var_diag[k])])
    if args.csv:
        write_rows(args.csv, ["coord", "name", "beta_debiased", "lower", "upper", "var"], rows)
    config = {"command": "ci", "input": str(args.input), "response": args.response,
              "rates": args.rates, "dantzig": asdict(dcfg), "clime": asdict(ccfg),
              "alpha": args.alpha, "coords": list(res.coords), "beta_from": args.beta_from,
              "sigma_eps": noise.sigma_eps, "sigma_x": noise.sigma_x,
              "plugin_noise": args.plugin_noise, "two_stage": not args.single_stage}
    report = {
        "intervals": [dict(zip(["coord", "name", "beta_debiased", "lower", "upper", "var"], r)) for r in rows],
        "alpha": res.alpha,
        "lambda_used": res.lambda_used,
        "nu_used": res.nu_used,
        "sigma_eps_used": res.sigma_eps_used,
        "beta_pilot": res.beta_pilot,
        "sigma_x_heuristic": heuristic,
        "meta": res.meta,
        **_provenance(args, config),
    }
    _emit(report, args.out)
    if not (res.meta.get("dantzig_converged", True) and res.meta.get("clime_converged", True)):
        raise NumericalError("solver did not converge: increase --max-iters", "clime")
    return 0


def cmd_simulate(args) -> int:
    from .experiments import load_config, run_experiment

    try:
        cfg = load_config(args.config)
    except (OSError, ValueError) as exc:
        raise DataError(f"{args.config}: {exc}") from exc
    overrides = {}
    if args.full:
        overrides["full"] = True
    if args.redraw_beta:
        overrides["redraw_beta"] = True
    if args.seed_given:
        overrides["seed"] = args.seed
    if args.T is not None:
        overrides["T"] = args.T
    cfg = {**cfg, **overrides}
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = run_experiment(cfg, out_dir, workers=args.workers)
    summary.update({"version": __version__, "seed": summary["config"]["seed"],
                    "config_hash": config_hash(summary["config"])})
    _emit(summary, args.out)
    return 0


def cmd_kl_verify(args) -> int:
    from . import theory

    config = {k: v for k, v in vars(args).items() if k not in ("func", "out")}
    if args.construction == "theorem3":
        j = args.j if args.j is not None else args.s - 1
        try:
            h0, h1 = theory.theorem3_pair(args.p, args.s, args.M, args.gamma, j,
                                          sigma_eps=args.sigma_eps, rho=args.rho)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        eq = theory.check_likelihood_equivalence((h0, h1), args.s - 2, j, args.trials, args.seed)
        report = {
            "construction": "theorem3",
            "anchor": args.s - 2, "j": j,
            "equivalence": asdict(eq) | {"passed": eq.passed},
            "kl_closed_form": theory.theorem3_kl_closed_form(h0, args.s, args.gamma, j),
        }
        if args.p <= 16:
            report["kl_exact"] = theory.kl_exact(h0, h1)
        est, se = theory.kl_montecarlo(h0, h1, max(args.trials, 1000), args.seed)
        report["kl_montecarlo"] = {"estimate": est, "stderr": se}
    else:
        try:
            betas = theory.theorem2_hypotheses(args.p, args.s, args.M, args.delta,
                                               args.max_size, args.seed)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        kls = []
        if args.p <= 20:
            for a in range(len(betas)):
                for b in range(a + 1, len(betas)):
                    kls.append(theory.kl_identity_covariance(betas[a], betas[b], args.sigma_eps, args.rho))
        half = args.s // 2
        dists = [int((np.sign(a[half:]) != np.sign(b[half:])).sum())
                 for i, a in enumerate(betas) for b in betas[i + 1:]]
        report = {
            "construction": "theorem2",
            "size": len(betas),
            "min_hamming": min(dists) if dists else None,
            "max_kl": max(kls) if kls else None,
            "kl_computed": bool(kls),
        }
    report.update(_provenance(args, config))
    _emit(report, args.out)
    if args.construction == "theorem3" and not report["equivalence"]["passed"]:
        raise NumericalError("likelihood equivalence violated", "theory")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="missreg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"missreg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="sparse regression estimate")
    _data_args(p)
    _dantzig_args(p)
    p.add_argument("--known-sigma", help="CSV of a known population covariance")
    p.add_argument("--csv", help="also write the coefficients as CSV")
    _common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("precision", help="approximate inverse covariance (CLIME)")
    _data_args(p, response=False)
    p.add_argument("--nu", type=_positive_or_auto, default="auto")
    p.add_argument("--nu-constant", type=float, default=1.0)
    p.add_argument("--b1", type=float, default=2.0, help="guess of the inverse's l1 norm for automatic nu")
    p.add_argument("--no-symmetrize", action="store_true")
    p.add_argument("--theta", required=True, help="output CSV for the fitted matrix")
    _common(p)
    p.set_defaults(func=cmd_precision)

    p = sub.add_parser("ci", help="de-biased estimates and confidence intervals")
    _data_args(p)
    _dantzig_args(p)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--coords", help="comma-separated names or 0-based indices (default: all)")
    p.add_argument("--nu", type=_positive_or_auto, default="auto")
    p.add_argument("--nu-constant", type=float, default=1.0)
    p.add_argument("--b1", type=float, default=2.0)
    p.add_argument("--beta-from", help="fit report (JSON) to use as the pilot estimate")
    p.add_argument("--plugin-noise", action="store_true", help="estimate sigma_eps from residuals")
    p.add_argument("--csv", help="write (coord, name, beta_debiased, lower, upper, var) rows here")
    _common(p)
    p.set_defaults(func=cmd_ci)

    p = sub.add_parser("simulate", help="run a synthetic experiment from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default="results")
    p.add_argument("--workers", type=int, help="parallel replications (default: $MISSREG_WORKERS or 1)")
    p.add_argument("--full", action="store_true", help="use the config's full-scale settings")
    p.add_argument("--redraw-beta", action="store_true", help="redraw support and signs per replication")
    p.add_argument("--T", type=int, help="override the replication count")
    _common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("kl-verify", help="check lower-bound constructions")
    p.add_argument("--construction", choices=("theorem2", "theorem3"), required=True)
    p.add_argument("--p", type=int, required=True)
    p.add_argument("--s", type=int, required=True)
    p.add_argument("--M", type=float, default=1.0)
    p.add_argument("--gamma", type=float, default=0.1)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--j", type=int, help="0-based perturbed coordinate (default s-1)")
    p.add_argument("--rho", type=float, default=0.5)
    p.add_argument("--sigma-eps", type=float, default=1.0)
    p.add_argument("--trials", type=int, default=10000)
    p.add_argument("--max-size", type=int, default=32)
    _common(p)
    p.set_defaults(func=cmd_kl_verify)
    return parser


def _fail(code: int, message: str, stage: str, kind: str) -> int:
    print(json.dumps({"error": message, "stage": stage, "type": kind}), file=sys.stderr)
    return code


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
        args.seed_given = any(a == "--seed" or a.startswith("--seed=") for a in argv)
        return args.func(args)
    except UsageError as exc:
        return _fail(1, str(exc), "usage", "usage")
    except (DataError, FileNotFoundError, IsADirectoryError) as exc:
        return _fail(1, str(exc), "input", "input")
    except NumericalError as exc:
        return _fail(2, str(exc), exc.stage, "numerical")
    except InfeasibleError as exc:
        return _fail(2, str(exc), "solver", "numerical")


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
