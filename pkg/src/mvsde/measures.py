"""Grid-sampled paths, equal-weight empirical measures, and their metrics.

All scalar summaries of a measure (mean, moments, norms) are computed with
exactly rounded summation, so they are invariant under any permutation of the
atoms.  The simulation kernels depend on this for reproducibility.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConfigurationError


def _finite_float_array(values, what: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ConfigurationError(f"{what} must be one-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise ConfigurationError(f"{what} must be non-empty")
    if not np.isfinite(arr).all():
        raise ConfigurationError(f"{what} contain non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class StoppedPath:
    """A trajectory observed on a uniform grid up to its current time.

    values[j] is the state at time j * grid_step; the last entry is the
    current state.  Coefficient functions receive the whole prefix, which is
    how path dependence (running maxima, averages, delays) enters the model.
    """

    grid_step: float
    values: np.ndarray

    def __post_init__(self):
        if not self.grid_step > 0:
            raise ConfigurationError(f"grid_step must be positive, got {self.grid_step}")
        object.__setattr__(self, "values", _finite_float_array(self.values, "path values"))

    def __len__(self) -> int:
        return len(self.values)

    @property
    def terminal(self) -> float:
        """State at the path's current (latest) time."""
        return float(self.values[-1])

    @property
    def time(self) -> float:
        """Current time of the path."""
        return (len(self.values) - 1) * self.grid_step


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Uniform probability measure on finitely many real support points."""

    atoms: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "atoms", _finite_float_array(self.atoms, "measure atoms"))

    def __len__(self) -> int:
        return len(self.atoms)

    @cached_property
    def mean(self) -> float:
        return math.fsum(self.atoms) / len(self.atoms)

    @cached_property
    def second_moment(self) -> float:
        return math.fsum(self.atoms * self.atoms) / len(self.atoms)

    @cached_property
    def sorted_atoms(self) -> np.ndarray:
        out = np.sort(self.atoms)
        out.setflags(write=False)
        return out


def lambda2_norm(mu: EmpiricalMeasure) -> float:
    """sqrt of the mean of (1 + |x|)^2 over the atoms; always >= 1."""
    shifted = 1.0 + np.abs(mu.atoms)
    return math.sqrt(math.fsum(shifted * shifted) / len(mu))


def w2_1d(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """Wasserstein-2 distance between equal-size equal-weight measures on R.

    Sorting both supports realises the optimal coupling exactly in one
    dimension, so this equals the minimum over all pairings of the
    root-mean-square gap.
    """
    if len(mu) != len(nu):
        raise ConfigurationError(
            f"w2_1d supports equal atom counts only, got {len(mu)} and {len(nu)}"
        )
    gaps = mu.sorted_atoms - nu.sorted_atoms
    return math.sqrt(math.fsum(gaps * gaps) / len(mu))


def gamma_rate(n: float, d: int) -> float:
    """Dimension-dependent rate at which an n-sample empirical measure
    approaches its law in squared Wasserstein-2 distance.

    n^(-1/2) for d < 4, n^(-1/2) log n at d = 4, n^(-1/d) for d > 4.
    """
    if not n >= 1:
        raise ConfigurationError(f"sample count must be >= 1, got {n}")
    if int(d) < 1:
        raise ConfigurationError(f"dimension must be >= 1, got {d}")
    if d < 4:
        return n**-0.5
    if d == 4:
        return n**-0.5 * math.log(n)
    return n ** (-1.0 / d)
