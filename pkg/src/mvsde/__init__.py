"""Interacting-particle simulation and drift estimation for path-dependent
mean-field SDEs.

The library simulates equations whose coefficients depend on the whole past
of the trajectory and on the law of the solution, approximated by the
empirical measure of an interacting ensemble.  It provides the explicit
particle scheme, an exact sampler for the built-in linear model, coupled
strong-error estimation, a law fixed-point iteration, and maximum-likelihood
drift estimation, all bit-reproducible from a seed.
"""

from .errors import (
    ConfigurationError,
    DegenerateDataError,
    DegenerateDiffusionError,
    DivergenceError,
    ModelEvaluationError,
    SimulationError,
)
from .likelihood import (
    EstimateReport,
    LikelihoodCurve,
    SweepRow,
    consistency_sweep,
    estimate_theta,
    likelihood_curve,
    linear_closed_form_mle,
    log_likelihood,
    maximize_scalar,
    mle_argmax,
)
from .measures import EmpiricalMeasure, StoppedPath, gamma_rate, lambda2_norm, w2_1d
from .models import (
    LinearModelParams,
    ModelSpec,
    available_models,
    build_model,
    diffusion_eval,
    drift_eval,
    linear_mean_field_model,
    register_model,
)
from .noise import NoiseSpec, brownian_increments, standard_normals
from .particles import (
    ErrorReport,
    GaussianInit,
    ParticleEnsemble,
    PicardDiagnostics,
    euler_maruyama_particles,
    linear_exact_paths,
    measure_at,
    measure_flow,
    picard_solve,
    strong_error,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "DegenerateDataError",
    "DegenerateDiffusionError",
    "DivergenceError",
    "EmpiricalMeasure",
    "ErrorReport",
    "EstimateReport",
    "GaussianInit",
    "LikelihoodCurve",
    "LinearModelParams",
    "ModelEvaluationError",
    "ModelSpec",
    "NoiseSpec",
    "ParticleEnsemble",
    "PicardDiagnostics",
    "SimulationError",
    "StoppedPath",
    "SweepRow",
    "available_models",
    "brownian_increments",
    "build_model",
    "consistency_sweep",
    "diffusion_eval",
    "drift_eval",
    "estimate_theta",
    "euler_maruyama_particles",
    "gamma_rate",
    "lambda2_norm",
    "likelihood_curve",
    "linear_closed_form_mle",
    "linear_exact_paths",
    "linear_mean_field_model",
    "log_likelihood",
    "maximize_scalar",
    "measure_at",
    "measure_flow",
    "mle_argmax",
    "picard_solve",
    "register_model",
    "standard_normals",
    "strong_error",
    "w2_1d",
]
