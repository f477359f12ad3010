"""Exception types and process exit codes shared across the package."""

from __future__ import annotations

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NO_CONVERGENCE = 3
EXIT_DIVERGENCE = 4
EXIT_IO = 5


class SimulationError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(SimulationError):
    """Invalid or unsupported combination of inputs."""


class ModelEvaluationError(SimulationError):
    """A coefficient or likelihood evaluation produced a non-finite value."""

    def __init__(self, message: str, theta: float | None = None, step: int | None = None):
        super().__init__(message)
        self.theta = theta
        self.step = step


class DegenerateDiffusionError(ModelEvaluationError):
    """The diffusion coefficient fell below the admissible floor."""


class DivergenceError(SimulationError):
    """A particle state left the admissible range during time stepping."""

    def __init__(self, message: str, particle: int | None = None, step: int | None = None):
        super().__init__(message)
        self.particle = particle
        self.step = step


class DegenerateDataError(SimulationError):
    """Observed data carry no information about the parameter."""
