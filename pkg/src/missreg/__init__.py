"""Sparse regression and de-biased inference with covariates missing completely at random."""

__version__ = "0.1.0"

from .design import (
    IncompleteDesign,
    MomentKind,
    NoiseSpec,
    SurrogateMoments,
    from_raw,
    known_moments,
    scaled_design,
    surrogate_covariance,
    surrogate_cross,
    surrogate_moments,
)
from .solver import InfeasibleError, SolveReport, SolverConfig, lp_oracle, solve_l1_linf
from .dantzig import DantzigConfig, RegressionFit, auto_lambda, fit, fit_auto
from .clime import ClimeConfig, PrecisionFit, auto_nu, fit_clime
from .homotopy import HomotopyResult, PathInfeasible, certify, homotopy_solve
from .inference import (
    InferenceResult,
    VarianceEstimate,
    confidence_intervals,
    debias,
    normal_quantile,
    run_inference,
    variance_data_driven,
    variance_oracle,
)
from .theory import (
    EquivalenceReport,
    Hypothesis,
    check_likelihood_equivalence,
    kl_exact,
    kl_identity_covariance,
    kl_identity_covariance_bound,
    kl_montecarlo,
    observed_loglik,
    theorem2_hypotheses,
    theorem3_kl_closed_form,
    theorem3_pair,
)
from .simulation import (
    InferenceSettings,
    SyntheticModel,
    banded_precision,
    generate,
    make_model,
    run_coverage,
    run_normality,
    run_rate_sweep,
)

__all__ = [
    "ClimeConfig",
    "DantzigConfig",
    "EquivalenceReport",
    "HomotopyResult",
    "Hypothesis",
    "IncompleteDesign",
    "InfeasibleError",
    "InferenceResult",
    "InferenceSettings",
    "MomentKind",
    "NoiseSpec",
    "PathInfeasible",
    "PrecisionFit",
    "RegressionFit",
    "SolveReport",
    "SolverConfig",
    "SurrogateMoments",
    "SyntheticModel",
    "VarianceEstimate",
    "auto_lambda",
    "auto_nu",
    "banded_precision",
    "certify",
    "check_likelihood_equivalence",
    "confidence_intervals",
    "debias",
    "fit",
    "fit_auto",
    "fit_clime",
    "from_raw",
    "generate",
    "homotopy_solve",
    "kl_exact",
    "kl_identity_covariance",
    "kl_identity_covariance_bound",
    "kl_montecarlo",
    "known_moments",
    "lp_oracle",
    "make_model",
    "normal_quantile",
    "observed_loglik",
    "run_coverage",
    "run_inference",
    "run_normality",
    "run_rate_sweep",
    "scaled_design",
    "solve_l1_linf",
    "surrogate_covariance",
    "surrogate_cross",
    "surrogate_moments",
    "theorem2_hypotheses",
    "theorem3_kl_closed_form",
    "theorem3_pair",
    "variance_data_driven",
    "variance_oracle",
]
