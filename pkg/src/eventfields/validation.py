"""Input-validation helpers shared by the estimator and the library surface."""

from __future__ import annotations

import numpy as np

from .datagen import Trajectory
from .errors import ConfigurationError, ContractError, DimensionError


def check_positive(name: str, value, strict: bool = True):
    """Numeric sanity check; returns the value for chaining."""
    if strict and not value > 0:
        raise ConfigurationError(f"{name} must be > 0, got {value!r}")
    if not strict and not value >= 0:
        raise ConfigurationError(f"{name} must be >= 0, got {value!r}")
    return value


def check_choice(name: str, value, options) -> None:
    if value not in options:
        raise ConfigurationError(
            f"{name} must be one of {sorted(options)!r}, got {value!r}"
        )


def as_array(name: str, x, ndim: int | None = None) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise DimensionError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ContractError(f"{name} contains non-finite values")
    return arr


def check_trajectory(traj, require_target: bool = True) -> Trajectory:
    """Accept a Trajectory (or compatible triple) and verify it is usable."""
    if not isinstance(traj, Trajectory):
        raise ContractError(f"expected a Trajectory, got {type(traj).__name__}")
    if traj.ctx_len < 1:
        raise ContractError("trajectory has an empty context")
    if require_target and traj.ctx_len >= len(traj):
        raise ContractError("trajectory has no target events after the context")
    return traj
