"""Coefficient models: path- and measure-dependent drift and diffusion.

A model is a pair of pure functions

    drift(theta, path, measure) -> float
    diffusion(path, measure)    -> float

over a stopped path and the current empirical measure, plus the admissible
parameter interval and a floor keeping the diffusion away from zero (the
likelihood is undefined otherwise).  Models may carry vectorised batch
variants of both coefficients; the particle kernels use them when present.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigurationError, DegenerateDiffusionError, ModelEvaluationError
from .measures import EmpiricalMeasure, StoppedPath

DriftFn = Callable[[float, StoppedPath, EmpiricalMeasure], float]
DiffusionFn = Callable[[StoppedPath, EmpiricalMeasure], float]
# Batch variants receive the (n_particles, k+1) matrix of path prefixes.
DriftBatchFn = Callable[[float, np.ndarray, EmpiricalMeasure], np.ndarray]
DiffusionBatchFn = Callable[[np.ndarray, EmpiricalMeasure], np.ndarray]

DEFAULT_THETA_DOMAIN = (-5.0, 5.0)
DEFAULT_SIGMA_FLOOR = 1e-8


@dataclass(frozen=True)
class LinearModelParams:
    """Parameters of the built-in linear mean-field model.

    dX = (theta * X + beta * E[X]) dt + sigma dW,  X_0 = x0.

    theta is the drift self-coupling (the estimation target), beta the known
    mean-field coupling, sigma a nonzero constant diffusion.
    """

    theta: float
    beta: float
    sigma: float
    x0: float

    def __post_init__(self):
        if self.sigma == 0:
            raise ConfigurationError("sigma must be nonzero")


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """A drift/diffusion pair with its parameter domain and diffusion floor.

    `linear` is set on the built-in linear mean-field model and carries the
    parameters that closed-form tooling (exact sampler, closed-form
    estimator) needs.
    """

    drift: DriftFn
    diffusion: DiffusionFn
    theta_domain: tuple[float, float] = DEFAULT_THETA_DOMAIN
    sigma_floor: float = DEFAULT_SIGMA_FLOOR
    name: str = "custom"
    drift_batch: DriftBatchFn | None = None
    diffusion_batch: DiffusionBatchFn | None = None
    linear: LinearModelParams | None = None

    def __post_init__(self):
        lo, hi = self.theta_domain
        if not lo < hi:
            raise ConfigurationError(f"theta_domain must satisfy lo < hi, got {self.theta_domain}")
        if not self.sigma_floor > 0:
            raise ConfigurationError(f"sigma_floor must be positive, got {self.sigma_floor}")

    def check_theta(self, theta: float) -> None:
        lo, hi = self.theta_domain
        if not lo <= theta <= hi:
            raise ConfigurationError(f"theta={theta} outside theta_domain [{lo}, {hi}]")


def drift_eval(model: ModelSpec, theta: float, path: StoppedPath, mu: EmpiricalMeasure) -> float:
    """Evaluate the drift, rejecting parameters outside the domain and
    non-finite outputs."""
    model.check_theta(theta)
    value = float(model.drift(theta, path, mu))
    if not np.isfinite(value):
        step = len(path) - 1
        raise ModelEvaluationError(
            f"drift returned non-finite value {value} at theta={theta}, step {step}",
            theta=theta,
            step=step,
        )
    return value


def diffusion_eval(model: ModelSpec, path: StoppedPath, mu: EmpiricalMeasure) -> float:
    """Evaluate the diffusion, enforcing |sigma| >= sigma_floor."""
    value = float(model.diffusion(path, mu))
    step = len(path) - 1
    if not np.isfinite(value):
        raise ModelEvaluationError(
            f"diffusion returned non-finite value {value} at step {step}", step=step
        )
    if abs(value) < model.sigma_floor:
        raise DegenerateDiffusionError(
            f"|diffusion|={abs(value)} below floor {model.sigma_floor} at step {step}",
            step=step,
        )
    return value


def linear_mean_field_model(
    params: LinearModelParams,
    theta_domain: tuple[float, float] = DEFAULT_THETA_DOMAIN,
    sigma_floor: float = DEFAULT_SIGMA_FLOOR,
) -> ModelSpec:
    """The built-in linear mean-field model with vectorised coefficients."""
    beta = params.beta
    sigma = params.sigma

    def drift(theta, path, mu):
        return theta * path.terminal + beta * mu.mean

    def diffusion(path, mu):
        return sigma

    def drift_batch(theta, paths, mu):
        return theta * paths[:, -1] + beta * mu.mean

    def diffusion_batch(paths, mu):
        return np.full(paths.shape[0], sigma)

    return ModelSpec(
        drift=drift,
        diffusion=diffusion,
        theta_domain=theta_domain,
        sigma_floor=sigma_floor,
        name="linear",
        drift_batch=drift_batch,
        diffusion_batch=diffusion_batch,
        linear=params,
    )


def _build_linear(
    theta: float = -0.5,
    beta: float = 1.0,
    sigma: float = 1.0,
    x0: float = 1.0,
    theta_domain: tuple[float, float] = DEFAULT_THETA_DOMAIN,
    sigma_floor: float = DEFAULT_SIGMA_FLOOR,
) -> ModelSpec:
    params = LinearModelParams(theta=theta, beta=beta, sigma=sigma, x0=x0)
    return linear_mean_field_model(params, theta_domain=theta_domain, sigma_floor=sigma_floor)


_REGISTRY: dict[str, Callable[..., ModelSpec]] = {"linear": _build_linear}


def register_model(name: str, builder: Callable[..., ModelSpec]) -> None:
    """Register a model builder so the CLI can select it by name."""
    if name in _REGISTRY:
        raise ConfigurationError(f"model name already registered: {name!r}")
    _REGISTRY[name] = builder


def available_models() -> tuple[str, ...]:
    return tuple(sorted(_REGISTRY))


def build_model(name: str, **params) -> ModelSpec:
    """Instantiate a registered model by name."""
    try:
        builder = _REGISTRY[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown model {name!r}; registered models: {', '.join(available_models())}"
        ) from None
    return builder(**params)
