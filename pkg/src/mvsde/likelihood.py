"""Drift-parameter estimation from one observed particle path.

The observation model is the discretised likelihood ratio between path laws
with different drifts and a common diffusion: left-endpoint sums of
drift / diffusion^2 against the path increments, minus half the matching
quadratic term.  Additive terms that do not depend on the parameter are
dropped throughout; they cannot move the argmax.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DegenerateDataError, ModelEvaluationError
from .measures import EmpiricalMeasure, StoppedPath
from .models import LinearModelParams, ModelSpec, diffusion_eval, drift_eval, linear_mean_field_model
from .particles import ParticleEnsemble, euler_maruyama_particles

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class LikelihoodCurve:
    """Log-likelihood sampled on a sorted parameter grid, with its argmax.

    Grid ties resolve toward the smallest parameter value.
    """

    thetas: tuple[float, ...]
    values: tuple[float, ...]
    argmax_theta: float
    argmax_value: float


@dataclass(frozen=True)
class EstimateReport:
    """A point estimate with the data geometry it came from.

    boundary flags a maximiser sitting on an endpoint of the parameter
    domain, which usually means the domain is mis-specified.
    """

    theta_hat: float
    method: str
    horizon: float
    n_particles: int
    n_steps: int
    seed: int
    loglik_at_hat: float
    boundary: bool = False


@dataclass(frozen=True)
class SweepRow:
    """Aggregate estimation error at one observation horizon.

    boundary_count is how many of the per-seed estimates sat on a domain
    endpoint; any nonzero value means the aggregate is suspect.
    """

    horizon: float
    mean_abs_error: float
    sd: float
    n_seeds: int
    boundary_count: int = 0


def _left_measures(ensemble: ParticleEnsemble) -> tuple[EmpiricalMeasure, ...]:
    return tuple(EmpiricalMeasure(ensemble.paths[:, k]) for k in range(ensemble.n_steps))


def _check_observed(ensemble: ParticleEnsemble, observed: int) -> None:
    if not 0 <= observed < ensemble.n_particles:
        raise ConfigurationError(
            f"observed index {observed} out of range 0..{ensemble.n_particles - 1}"
        )


def log_likelihood(
    model: ModelSpec,
    theta: float,
    ensemble: ParticleEnsemble,
    observed: int = 0,
    *,
    measures: tuple[EmpiricalMeasure, ...] | None = None,
) -> float:
    """Discretised log-likelihood of theta along one observed particle.

    sum_k  b_k / sigma_k^2 * (y_{k+1} - y_k)  -  dt/2 * sum_k  b_k^2 / sigma_k^2,

    with both coefficients evaluated at the observed particle's stopped path
    and the full ensemble's empirical measure at each left endpoint.
    Parameter-free terms are dropped, so values are comparable across theta
    but not across datasets.
    """
    _check_observed(ensemble, observed)
    model.check_theta(theta)
    if measures is None:
        measures = _left_measures(ensemble)
    elif len(measures) < ensemble.n_steps:
        raise ConfigurationError(
            f"need {ensemble.n_steps} left-endpoint measures, got {len(measures)}"
        )

    y = ensemble.paths[observed]
    dt = ensemble.grid_step
    ito_terms = []
    quad_terms = []
    for k in range(ensemble.n_steps):
        path = StoppedPath(dt, y[: k + 1])
        b = drift_eval(model, theta, path, measures[k])
        sigma = diffusion_eval(model, path, measures[k])
        ratio = b / (sigma * sigma)
        ito_terms.append(ratio * (y[k + 1] - y[k]))
        quad_terms.append(ratio * b)
    value = math.fsum(ito_terms) - 0.5 * dt * math.fsum(quad_terms)
    if not np.isfinite(value):
        raise ModelEvaluationError(f"log-likelihood is non-finite at theta={theta}", theta=theta)
    return value


def likelihood_curve(
    model: ModelSpec,
    ensemble: ParticleEnsemble,
    observed: int = 0,
    grid_points: int = 201,
    *,
    measures: tuple[EmpiricalMeasure, ...] | None = None,
) -> LikelihoodCurve:
    """Sample the log-likelihood on a uniform grid over the parameter domain."""
    if grid_points < 2:
        raise ConfigurationError(f"grid_points must be >= 2, got {grid_points}")
    if measures is None:
        measures = _left_measures(ensemble)
    thetas = np.linspace(model.theta_domain[0], model.theta_domain[1], grid_points)
    values = [log_likelihood(model, t, ensemble, observed, measures=measures) for t in thetas]
    best = int(np.argmax(values))
    return LikelihoodCurve(
        thetas=tuple(float(t) for t in thetas),
        values=tuple(values),
        argmax_theta=float(thetas[best]),
        argmax_value=values[best],
    )


def maximize_scalar(
    fn,
    domain: tuple[float, float],
    grid_points: int = 201,
    refine_tol: float = 1e-6,
) -> tuple[float, float, bool]:
    """Grid scan over a closed interval followed by golden-section refinement.

    Returns (argmax, value, boundary).  Coarse-grid ties break toward the
    smaller argument; a coarse argmax on an endpoint is returned as-is with
    boundary=True since no bracket exists there.  Assumes only continuity of
    fn, not concavity.
    """
    if grid_points < 3:
        raise ConfigurationError(f"grid_points must be >= 3, got {grid_points}")
    if not refine_tol > 0:
        raise ConfigurationError(f"refine_tol must be positive, got {refine_tol}")
    grid = np.linspace(domain[0], domain[1], grid_points)
    values = [fn(x) for x in grid]
    j = int(np.argmax(values))
    if j in (0, grid_points - 1):
        return float(grid[j]), values[j], True

    lo, hi = float(grid[j - 1]), float(grid[j + 1])
    best_x, best_v = float(grid[j]), values[j]

    def consider(x, v):
        nonlocal best_x, best_v
        if v > best_v or (v == best_v and x < best_x):
            best_x, best_v = x, v

    x1 = hi - _GOLDEN * (hi - lo)
    x2 = lo + _GOLDEN * (hi - lo)
    f1, f2 = fn(x1), fn(x2)
    while hi - lo > refine_tol:
        consider(x1, f1)
        consider(x2, f2)
        if f1 >= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - _GOLDEN * (hi - lo)
            f1 = fn(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + _GOLDEN * (hi - lo)
            f2 = fn(x2)
    consider(x1, f1)
    consider(x2, f2)
    return best_x, best_v, False


def mle_argmax(
    model: ModelSpec,
    ensemble: ParticleEnsemble,
    observed: int = 0,
    grid_points: int = 201,
    refine_tol: float = 1e-6,
) -> EstimateReport:
    """Maximise the discretised log-likelihood over the parameter domain."""
    _check_observed(ensemble, observed)
    measures = _left_measures(ensemble)

    def objective(theta):
        return log_likelihood(model, theta, ensemble, observed, measures=measures)

    theta_hat, value, boundary = maximize_scalar(
        objective, model.theta_domain, grid_points=grid_points, refine_tol=refine_tol
    )
    return EstimateReport(
        theta_hat=theta_hat,
        method="grid-refine",
        horizon=ensemble.horizon,
        n_particles=ensemble.n_particles,
        n_steps=ensemble.n_steps,
        seed=ensemble.seed,
        loglik_at_hat=value,
        boundary=boundary,
    )


def linear_closed_form_mle(
    ensemble: ParticleEnsemble,
    beta: float,
    observed: int = 0,
    *,
    sigma: float = 1.0,
) -> EstimateReport:
    """Closed-form drift estimate for the linear mean-field model.

    theta_hat = [ sum_k y_k (y_{k+1} - y_k) - dt sum_k beta y_k ybar_k ]
                / [ dt sum_k y_k^2 ],

    where ybar_k is the ensemble mean at node k.  This is the exact vertex
    of the model's quadratic log-likelihood, so it needs no search; sigma
    only scales the reported log-likelihood value.
    """
    _check_observed(ensemble, observed)
    y = ensemble.paths[observed]
    dt = ensemble.grid_step
    left = y[:-1]
    means = np.array([EmpiricalMeasure(ensemble.paths[:, k]).mean for k in range(ensemble.n_steps)])

    den = math.fsum(left * left) * dt
    if den == 0.0:
        raise DegenerateDataError("observed path is identically zero; drift is unidentifiable")
    num = math.fsum(left * np.diff(y)) - beta * dt * math.fsum(left * means)
    theta_hat = num / den

    params = LinearModelParams(theta=theta_hat, beta=beta, sigma=sigma, x0=float(y[0]))
    scoring = linear_mean_field_model(params, theta_domain=(-math.inf, math.inf))
    value = log_likelihood(scoring, theta_hat, ensemble, observed)
    return EstimateReport(
        theta_hat=theta_hat,
        method="closed-form",
        horizon=ensemble.horizon,
        n_particles=ensemble.n_particles,
        n_steps=ensemble.n_steps,
        seed=ensemble.seed,
        loglik_at_hat=value,
        boundary=False,
    )


def estimate_theta(
    model: ModelSpec,
    ensemble: ParticleEnsemble,
    observed: int = 0,
    method: str = "auto",
    grid_points: int = 201,
    refine_tol: float = 1e-6,
) -> EstimateReport:
    """Estimate the drift parameter, dispatching on the requested method.

    "auto" picks the closed form for the built-in linear model and the
    grid-plus-refine search otherwise.
    """
    if method == "auto":
        method = "closed-form" if model.linear is not None else "grid-refine"
    if method == "closed-form":
        if model.linear is None:
            raise ConfigurationError("closed-form estimation requires the built-in linear model")
        return linear_closed_form_mle(
            ensemble, model.linear.beta, observed, sigma=model.linear.sigma
        )
    if method == "grid-refine":
        return mle_argmax(model, ensemble, observed, grid_points=grid_points, refine_tol=refine_tol)
    raise ConfigurationError(f"unknown estimation method {method!r}")


def consistency_sweep(
    model: ModelSpec,
    theta0: float,
    horizons,
    n_particles: int,
    steps_per_unit_time: float,
    seeds,
    *,
    init=None,
    observed: int = 0,
    method: str = "auto",
    grid_points: int = 201,
    refine_tol: float = 1e-6,
) -> tuple[SweepRow, ...]:
    """Estimation error as a function of the observation horizon.

    For each horizon T the step count scales as round(steps_per_unit_time * T),
    keeping the grid spacing fixed.  Each seed simulates fresh data at the
    true parameter and re-estimates it; rows aggregate |theta_hat - theta0|
    across seeds.
    """
    horizons = [float(t) for t in horizons]
    if not horizons:
        raise ConfigurationError("horizons must be non-empty")
    if any(b <= a for a, b in zip(horizons, horizons[1:])):
        raise ConfigurationError(f"horizons must be ascending, got {horizons}")
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ConfigurationError("seeds must be non-empty")
    if not steps_per_unit_time > 0:
        raise ConfigurationError(f"steps_per_unit_time must be positive, got {steps_per_unit_time}")
    if init is None:
        if model.linear is None:
            raise ConfigurationError("init is required for custom models")
        init = model.linear.x0

    rows = []
    for horizon in horizons:
        n_steps = max(1, round(steps_per_unit_time * horizon))
        errors = []
        boundary_count = 0
        for seed in seeds:
            ensemble = euler_maruyama_particles(
                model, theta0, init, n_particles, n_steps, horizon, seed
            )
            report = estimate_theta(
                model, ensemble, observed, method=method,
                grid_points=grid_points, refine_tol=refine_tol,
            )
            errors.append(abs(report.theta_hat - theta0))
            boundary_count += report.boundary
        mean = math.fsum(errors) / len(errors)
        if len(errors) > 1:
            centered = np.asarray(errors) - mean
            sd = math.sqrt(math.fsum(centered * centered) / (len(errors) - 1))
        else:
            sd = 0.0
        rows.append(
            SweepRow(
                horizon=horizon,
                mean_abs_error=mean,
                sd=sd,
                n_seeds=len(errors),
                boundary_count=boundary_count,
            )
        )
    return tuple(rows)
