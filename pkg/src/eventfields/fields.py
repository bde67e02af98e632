"""Ground-truth latent fields: a viscous Burgers solver and an analytic family.

Two field sources drive data generation. ``solve_burgers_1d`` integrates the
viscous Burgers equation on the periodic unit interval with a conservative
finite-volume scheme, producing a :class:`FieldGrid` that is then interpolated
multilinearly in space-time. ``analytic_advection_field`` is a closed-form
traveling Gaussian bump — exact everywhere, so downstream numerics can be
checked against it without solver error in the way.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ContractError, DomainError


@dataclass
class FieldGrid:
    """Field values u(t, x) sampled on a rectangular space-time grid.

    values has shape (len(t_grid), len(x_grids[0]), ..., d_u).
    """

    t_grid: np.ndarray
    x_grids: tuple[np.ndarray, ...]
    values: np.ndarray

    def __post_init__(self):
        self.t_grid = np.asarray(self.t_grid, dtype=float)
        self.x_grids = tuple(np.asarray(g, dtype=float) for g in self.x_grids)
        self.values = np.asarray(self.values, dtype=float)
        expected = (self.t_grid.size,) + tuple(g.size for g in self.x_grids)
        if self.values.shape[:-1] != expected or self.values.ndim != len(expected) + 1:
            raise ContractError(
                f"values shape {self.values.shape} does not match grid sizes {expected}"
            )
        for g in (self.t_grid, *self.x_grids):
            if g.size < 2 or not np.all(np.diff(g) > 0):
                raise ContractError("grid axes must be increasing with >= 2 points")
        if not np.isfinite(self.values).all():
            raise ContractError("field values must be finite")

    @property
    def d_u(self) -> int:
        return self.values.shape[-1]

    @property
    def d_x(self) -> int:
        return len(self.x_grids)


def _axis_brackets(grid: np.ndarray, pts: np.ndarray):
    if np.any(pts < grid[0]) or np.any(pts > grid[-1]):
        bad = pts[(pts < grid[0]) | (pts > grid[-1])][0]
        raise DomainError(
            f"query {bad:.6g} outside grid hull [{grid[0]:.6g}, {grid[-1]:.6g}]"
        )
    idx = np.clip(np.searchsorted(grid, pts, side="right") - 1, 0, grid.size - 2)
    w = (pts - grid[idx]) / (grid[idx + 1] - grid[idx])
    return idx, np.clip(w, 0.0, 1.0)


def field_interpolate_many(field: FieldGrid, ts: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of the field at (ts[i], xs[i]); (n, d_u) out."""
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    xs = np.asarray(xs, dtype=float).reshape(ts.size, field.d_x)
    axes = [(field.t_grid, ts)] + [
        (g, xs[:, j]) for j, g in enumerate(field.x_grids)
    ]
    brackets = [_axis_brackets(g, p) for g, p in axes]
    out = np.zeros((ts.size, field.d_u))
    for corner in itertools.product((0, 1), repeat=len(axes)):
        weight = np.ones(ts.size)
        index = []
        for (idx, w), bit in zip(brackets, corner):
            weight = weight * (w if bit else 1.0 - w)
            index.append(idx + bit)
        out += weight[:, None] * field.values[tuple(index)]
    return out


def field_interpolate(field: FieldGrid, t: float, x) -> np.ndarray:
    """Field value at a single space-time point (exact at grid nodes)."""
    return field_interpolate_many(field, np.array([t]), np.atleast_2d(x))[0]


def field_evaluator(field: FieldGrid):
    """Vectorized (ts, xs) -> (n, d_u) accessor for a gridded field."""

    def evaluate(ts, xs):
        return field_interpolate_many(field, ts, xs)

    return evaluate


def periodic_pad_x(field: FieldGrid) -> FieldGrid:
    """Extend each 1-periodic spatial axis by one wrapped node on both sides.

    Cell-centered grids cover [dx/2, 1 - dx/2], so queries near the domain
    edges would otherwise fall outside the interpolation hull; padding with the
    opposite boundary's values makes the hull cover all of [0, 1] while
    agreeing with periodic interpolation.
    """
    values = field.values
    x_grids = []
    for axis, g in enumerate(field.x_grids, start=1):
        dx = g[1] - g[0]
        x_grids.append(np.concatenate([[g[0] - dx], g, [g[-1] + dx]]))
        first = np.take(values, [0], axis=axis)
        last = np.take(values, [-1], axis=axis)
        values = np.concatenate([last, values, first], axis=axis)
    return FieldGrid(field.t_grid, tuple(x_grids), values)


# ---------------------------------------------------------------------------
# Viscous Burgers on periodic [0, 1]
# ---------------------------------------------------------------------------


def _godunov_flux(u_left: np.ndarray, u_right: np.ndarray) -> np.ndarray:
    # exact Riemann flux for the convex flux u^2/2
    fl = 0.5 * np.maximum(u_left, 0.0) ** 2
    fr = 0.5 * np.minimum(u_right, 0.0) ** 2
    return np.maximum(fl, fr)


def _burgers_rhs(u: np.ndarray, nu: float, dx: float) -> np.ndarray:
    u_l = u
    u_r = np.roll(u, -1)
    flux = _godunov_flux(u_l, u_r)  # flux at interface i+1/2
    adv = -(flux - np.roll(flux, 1)) / dx
    diff = nu * (np.roll(u, -1) - 2.0 * u + np.roll(u, 1)) / dx**2
    return adv + diff


def burgers_stable_dt(ic: np.ndarray, nu: float, dx: float) -> float:
    """Largest explicit step honoring both the advective and diffusive limits."""
    u_max = max(float(np.abs(ic).max()), 1e-12)
    return min(dx / u_max, dx**2 / (2.0 * nu))


def solve_burgers_1d(
    ic: np.ndarray,
    nu: float,
    t_max: float,
    n_saves: int,
    dt: float | None = None,
) -> FieldGrid:
    """Integrate du/dt + u du/dx = nu d2u/dx2 on periodic [0, 1].

    ``ic`` gives the initial profile on a uniform cell-center grid. The scheme
    is a conservative finite-volume Godunov flux for the advective term plus
    central diffusion, advanced with Heun's two-stage Runge-Kutta, so the
    spatial mean of u is preserved exactly. Snapshots are stored on a uniform
    grid of ``n_saves`` times from 0 to t_max.

    Passing ``dt`` overrides the automatic step; a configuration error with a
    suggested value is raised if it violates the CFL stability limit.
    """
    ic = np.asarray(ic, dtype=float)
    if ic.ndim != 1 or ic.size < 4:
        raise ConfigurationError("initial profile must be 1-d with >= 4 cells")
    if nu <= 0:
        raise ConfigurationError("viscosity nu must be positive")
    if t_max <= 0 or n_saves < 2:
        raise ConfigurationError("need t_max > 0 and at least 2 snapshots")
    n_x = ic.size
    dx = 1.0 / n_x
    limit = burgers_stable_dt(ic, nu, dx)
    if dt is None:
        dt = 0.4 * limit
    elif dt > limit:
        raise ConfigurationError(
            f"dt={dt:.3g} violates the CFL limit; use dt <= {limit:.3g}"
        )

    # round the step count up to a multiple of the save interval so snapshots
    # land exactly on the uniform save grid
    n_segments = n_saves - 1
    steps_per_segment = max(1, int(np.ceil(t_max / (n_segments * dt))))
    n_steps = steps_per_segment * n_segments
    dt = t_max / n_steps

    t_grid = np.linspace(0.0, t_max, n_saves)
    x_grid = (np.arange(n_x) + 0.5) * dx
    values = np.empty((n_saves, n_x, 1))
    u = ic.copy()
    values[0, :, 0] = u
    for seg in range(n_segments):
        for _ in range(steps_per_segment):
            k1 = _burgers_rhs(u, nu, dx)
            k2 = _burgers_rhs(u + dt * k1, nu, dx)
            u = u + 0.5 * dt * (k1 + k2)
        values[seg + 1, :, 0] = u
    return FieldGrid(t_grid, (x_grid,), values)


# ---------------------------------------------------------------------------
# Analytic traveling-bump field
# ---------------------------------------------------------------------------


def periodic_distance(a: np.ndarray, b) -> np.ndarray:
    """Shortest distance on the unit circle, per coordinate."""
    d = np.abs(np.mod(a - b, 1.0))
    return np.minimum(d, 1.0 - d)


def analytic_advection_field(
    amplitude: float, speed: float, width: float, d_x: int = 1, x0=0.5
):
    """Closed-form field: a Gaussian bump of the given width circling [0,1]^d_x.

        u(t, x) = amplitude * exp(-sum_j dist_per(x_j, x0_j + speed*t)^2 / (2 width^2))

    Returns a vectorized accessor (ts, xs) -> (n, 1), infinitely smooth and
    1-periodic in every spatial coordinate — the exact oracle counterpart to
    the numerically solved fields.
    """
    if width <= 0:
        raise ConfigurationError("bump width must be positive")
    center = np.broadcast_to(np.asarray(x0, dtype=float), (d_x,)).copy()

    def evaluate(ts, xs):
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        xs = np.asarray(xs, dtype=float).reshape(ts.size, d_x)
        c = np.mod(center[None, :] + speed * ts[:, None], 1.0)
        d2 = (periodic_distance(xs, c) ** 2).sum(axis=1)
        return (amplitude * np.exp(-d2 / (2.0 * width**2)))[:, None]

    return evaluate
