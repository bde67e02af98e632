"""Adaptive Dormand-Prince 5(4) solver, sparse time grids, latent interpolation.

The solver clips its steps to land exactly on every requested output time, so
requesting a dense set of outputs forces many small steps ("sequential
method"). Solving only on a sparse uniform grid and interpolating between the
stored states is the fast path the rest of the package builds on.

Gradients flow through the solver by plain reverse-mode differentiation of the
recorded steps (no adjoint). Step sizes stay inside the autograd graph so the
backward pass is the exact derivative of the discrete computation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ConfigurationError, DomainError, StiffnessError
from .nn import DTYPE, Tensor

# Dormand-Prince 5(4) tableau. C/A give the stage times and couplings, B the
# 5th-order weights, E = B - B_hat the embedded error weights. Stage 7 reuses
# the next step's first evaluation (FSAL).
DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
DP_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
DP_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
DP_B_HAT = np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)
DP_E = DP_B - DP_B_HAT

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0
BETA = 0.04  # PI controller: weight on the previous step's error
EXPO1 = 0.2 - 0.75 * BETA
# Below this error the growth clamp saturates anyway, so flooring the error
# here only zeroes a gradient that the clamp would zero regardless (and keeps
# err**-EXPO1 finite for exactly-integrated dynamics).
ERR_FLOOR = 1e-8
UNDERFLOW_FRACTION = 1e-12  # of the total integration span


def _error_norm(delta: Tensor, scale: Tensor) -> Tensor:
    return torch.sqrt(torch.mean((delta / scale) ** 2))


def _initial_step(f, y0: Tensor, f0: Tensor, span: float, rtol: float, atol: float) -> Tensor:
    """Automatic first-step selection (Hairer/Norsett/Wanner heuristic)."""
    scale = atol + rtol * y0.abs()
    d0 = _error_norm(y0, scale)
    d1 = _error_norm(f0, scale)
    if d0.item() < 1e-5 or d1.item() < 1e-5:
        h0 = torch.tensor(1e-6, dtype=DTYPE)
    else:
        h0 = 0.01 * d0 / d1
    y1 = y0 + h0 * f0
    f1 = f(y1)
    d2 = _error_norm(f1 - f0, scale) / h0
    if max(d1.item(), d2.item()) <= 1e-15:
        h1 = torch.maximum(torch.tensor(1e-6, dtype=DTYPE), h0 * 1e-3)
    else:
        h1 = (0.01 / torch.maximum(d1, d2)) ** 0.2
    h = torch.minimum(100 * h0, h1)
    return torch.minimum(h, torch.tensor(span, dtype=DTYPE))


def dopri5_solve(f, z0: Tensor, t_eval, rtol: float, atol: float) -> list[Tensor]:
    """Integrate dz/dt = f(z) from t_eval[0], returning the state at each time.

    ``f`` maps a state tensor to its derivative (autonomous); the state may
    have any shape, including a leading batch dimension, in which case all
    batch elements share the accepted steps and the error norm runs over every
    element.

    Raises
    ------
    StiffnessError
        If the accepted step size underflows (below 1e-12 of the span); the
        exception carries the failing time ``t``.
    """
    if rtol <= 0 or atol <= 0:
        raise ConfigurationError("rtol and atol must both be positive")
    times = np.asarray(t_eval, dtype=float)
    if times.ndim != 1 or times.size < 1:
        raise ConfigurationError("t_eval must be a 1-d array of times")
    if times.size > 1 and not np.all(np.diff(times) > 0):
        raise ConfigurationError("t_eval must be strictly increasing")

    y = z0 if isinstance(z0, torch.Tensor) else torch.as_tensor(z0, dtype=DTYPE)
    outputs = [y]
    if times.size == 1:
        return outputs

    span = float(times[-1] - times[0])
    h_min = UNDERFLOW_FRACTION * span
    t = torch.tensor(times[0], dtype=DTYPE)
    k1 = f(y)
    h = _initial_step(f, y, k1, span, rtol, atol)
    err_prev = torch.tensor(1e-4, dtype=DTYPE)

    for target in times[1:]:
        # step until we land on `target`, clipping the final step onto it
        while float(target) - t.item() > 1e-14 * span:
            remaining = target - t
            clipped = h.item() >= remaining.item()
            h_step = remaining if clipped else h
            if h_step.item() < h_min:
                raise StiffnessError(
                    f"step size underflow at t={t.item():.6g}", t=t.item()
                )

            ks = [k1]
            for i in range(1, 7):
                yi = y + h_step * sum(a * k for a, k in zip(DP_A[i], ks))
                ks.append(f(yi))
            y_new = y + h_step * sum(b * k for b, k in zip(DP_B, ks) if b != 0.0)
            delta = h_step * sum(e * k for e, k in zip(DP_E, ks) if e != 0.0)
            scale = atol + rtol * torch.maximum(y.detach().abs(), y_new.detach().abs())
            err = _error_norm(delta, scale)

            if err.item() <= 1.0:
                t = t + h_step
                y = y_new
                k1 = ks[6]  # FSAL: last stage is f(y_new)
                err_c = torch.clamp(err, min=ERR_FLOOR)
                factor = torch.clamp(
                    SAFETY * err_c ** (-EXPO1) * err_prev**BETA, MIN_FACTOR, MAX_FACTOR
                )
                h = h_step * factor
                err_prev = torch.clamp(err_c, min=1e-4)
            else:
                factor = torch.clamp(SAFETY * err ** (-EXPO1), MIN_FACTOR, 1.0)
                h = h_step * factor
        outputs.append(y)
    return outputs


# ---------------------------------------------------------------------------
# Sparse grid + interpolation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SparseGrid:
    """Uniform time grid tau_1 < ... < tau_n with exact endpoints."""

    tau: np.ndarray

    def __post_init__(self):
        tau = np.asarray(self.tau, dtype=float)
        if tau.ndim != 1 or tau.size < 2:
            raise ConfigurationError("sparse grid needs at least 2 points")
        dt = np.diff(tau)
        if not np.all(dt > 0):
            raise ConfigurationError("sparse grid times must be strictly increasing")
        spacing = (tau[-1] - tau[0]) / (tau.size - 1)
        if not np.allclose(dt, spacing, rtol=1e-9, atol=1e-12 * max(1.0, abs(tau[-1]))):
            raise ConfigurationError("sparse grid must be uniformly spaced")
        object.__setattr__(self, "tau", tau)

    @property
    def n(self) -> int:
        return self.tau.size

    @property
    def spacing(self) -> float:
        return float((self.tau[-1] - self.tau[0]) / (self.n - 1))


def make_sparse_grid(t_first: float, t_last: float, n: int) -> SparseGrid:
    """n uniformly spaced times with tau_1 = t_first and tau_n = t_last exactly."""
    if n < 2:
        raise ConfigurationError(f"sparse grid size must be >= 2, got {n}")
    if not t_last > t_first:
        raise ConfigurationError("t_last must exceed t_first")
    return SparseGrid(np.linspace(t_first, t_last, n))


@dataclass
class LatentPath:
    """ODE states on a sparse grid plus the rule for evaluating in between."""

    grid: SparseGrid
    states: Tensor  # (n, *state_shape)
    method: str  # "nearest" | "linear"

    def __post_init__(self):
        if self.method not in ("nearest", "linear"):
            raise ConfigurationError(f"unknown interpolation method {self.method!r}")
        if self.states.shape[0] != self.grid.n:
            raise ConfigurationError(
                f"path has {self.states.shape[0]} states for {self.grid.n} grid nodes"
            )


def _grid_positions(path: LatentPath, ts: np.ndarray) -> np.ndarray:
    tau = path.grid.tau
    if np.any(ts < tau[0]) or np.any(ts > tau[-1]):
        bad = ts[(ts < tau[0]) | (ts > tau[-1])][0]
        raise DomainError(
            f"time {bad:.6g} outside the solved span [{tau[0]:.6g}, {tau[-1]:.6g}]"
        )
    pos = (ts - tau[0]) / path.grid.spacing
    # snap positions a few ulp away from a grid node onto it, so evaluating at
    # a node returns that node's state exactly
    nearest_int = np.rint(pos)
    return np.where(np.abs(pos - nearest_int) < 1e-9, nearest_int, pos)


def interpolate_latent(path: LatentPath, t: float) -> Tensor:
    """Latent state at time t: nearest grid node, or linear between brackets.

    Nearest-neighbor ties (t exactly midway) resolve to the earlier node.
    Differentiable with respect to the bracketing states.
    """
    return interpolate_latent_many(path, np.array([float(t)]))[0]


def interpolate_latent_many(path: LatentPath, ts) -> Tensor:
    """Vectorized interpolation at times ts; returns (len(ts), *state_shape)."""
    ts = np.asarray(ts, dtype=float)
    pos = _grid_positions(path, ts)
    n = path.grid.n
    if path.method == "nearest":
        lo = np.minimum(np.floor(pos), n - 2).astype(int)
        frac = pos - lo
        idx = np.where(frac > 0.5, lo + 1, lo)
        return path.states[torch.as_tensor(idx)]
    lo = np.minimum(np.floor(pos), n - 2).astype(int)
    w = torch.as_tensor(pos - lo, dtype=DTYPE)
    w = w.reshape((-1,) + (1,) * (path.states.ndim - 1))
    s_lo = path.states[torch.as_tensor(lo)]
    s_hi = path.states[torch.as_tensor(lo + 1)]
    return (1.0 - w) * s_lo + w * s_hi
