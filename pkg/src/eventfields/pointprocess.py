"""Spatiotemporal Poisson-process primitives.

Thinning simulation of a non-homogeneous process, Monte-Carlo integration of
an intensity over a bounded space-time domain, and the point-process
log-likelihood

    log p({(t_i, x_i)}) = sum_i log lam(t_i, x_i) - integral_A lam dt dx.

Simulation runs on numpy with caller-owned ``numpy.random.Generator`` streams;
the likelihood pieces operate on torch tensors so they can sit inside a
differentiable objective.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .errors import (
    BoundViolationError,
    ConfigurationError,
    ContractError,
    DomainError,
    EvaluationError,
)
from .nn import DTYPE, Tensor


@dataclass(frozen=True)
class SpaceTimeDomain:
    """Bounded box [t_lo, t_hi] x prod_j [lo_j, hi_j]."""

    t_range: tuple[float, float]
    x_ranges: tuple[tuple[float, float], ...]

    def __post_init__(self):
        ranges = [self.t_range, *self.x_ranges]
        for lo, hi in ranges:
            if not hi > lo:
                raise ConfigurationError(
                    f"degenerate domain: range [{lo}, {hi}] has non-positive extent"
                )
        object.__setattr__(self, "x_ranges", tuple(tuple(r) for r in self.x_ranges))

    @property
    def d_x(self) -> int:
        return len(self.x_ranges)

    def volume(self) -> float:
        v = self.t_range[1] - self.t_range[0]
        for lo, hi in self.x_ranges:
            v *= hi - lo
        return v

    def space_volume(self) -> float:
        v = 1.0
        for lo, hi in self.x_ranges:
            v *= hi - lo
        return v

    def contains(self, t: float, x) -> bool:
        if not (self.t_range[0] <= t <= self.t_range[1]):
            return False
        return all(lo <= xi <= hi for xi, (lo, hi) in zip(np.atleast_1d(x), self.x_ranges))

    def sample_uniform(self, n: int, rng: np.random.Generator):
        """n uniform space-time points; returns (times (n,), locations (n, d_x))."""
        ts = rng.uniform(self.t_range[0], self.t_range[1], size=n)
        xs = np.column_stack(
            [rng.uniform(lo, hi, size=n) for lo, hi in self.x_ranges]
        ) if self.d_x else np.zeros((n, 0))
        return ts, xs


@dataclass
class EventSeq:
    """Time-sorted events (t_i, x_i) with strictly increasing times."""

    times: np.ndarray
    locations: np.ndarray  # (N, d_x)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.locations = np.asarray(self.locations, dtype=float)
        if self.locations.ndim != 2 or self.locations.shape[0] != self.times.size:
            raise ContractError(
                f"locations shape {self.locations.shape} does not match "
                f"{self.times.size} event times"
            )
        if self.times.size > 1 and not np.all(np.diff(self.times) > 0):
            raise ContractError("event times must be strictly increasing")

    def __len__(self) -> int:
        return self.times.size


def _nudge_apart(times: np.ndarray) -> np.ndarray:
    """Bump duplicate sorted times up by one ulp each until strictly increasing."""
    out = times.copy()
    for i in range(1, out.size):
        while out[i] <= out[i - 1]:
            out[i] = np.nextafter(out[i - 1], math.inf)
    return out


def thinning_sample(
    intensity, domain: SpaceTimeDomain, lambda_max: float, rng: np.random.Generator
) -> EventSeq:
    """Draw one realization of the process with the given intensity (thinning).

    Proposes a homogeneous Poisson set at rate ``lambda_max`` over the domain
    and keeps each proposal with probability intensity/lambda_max. The caller
    must supply a true upper bound; any observed excursion above it aborts.

    ``intensity`` follows the package-wide vectorized convention: it maps
    (times (n,), locations (n, d_x)) to n non-negative rates.
    """
    if lambda_max < 0:
        raise ConfigurationError("lambda_max must be non-negative")
    n_prop = rng.poisson(lambda_max * domain.volume())
    if n_prop == 0:
        return EventSeq(np.zeros(0), np.zeros((0, domain.d_x)))
    ts, xs = domain.sample_uniform(n_prop, rng)
    order = np.argsort(ts, kind="stable")
    ts, xs = ts[order], xs[order]
    us = rng.uniform(0.0, 1.0, size=n_prop)

    lam = np.asarray(intensity(ts, xs), dtype=float)
    over = lam > lambda_max
    if over.any():
        i = int(np.argmax(over))
        raise BoundViolationError(
            f"intensity {lam[i]:.6g} exceeds lambda_max {lambda_max:.6g} "
            f"at t={ts[i]:.6g}, x={np.array2string(xs[i], precision=4)}"
        )
    keep = us * lambda_max < lam
    if not keep.any():
        return EventSeq(np.zeros(0), np.zeros((0, domain.d_x)))
    times = _nudge_apart(ts[keep])
    return EventSeq(times, xs[keep])


def mc_intensity_integral(
    intensity, domain: SpaceTimeDomain, n_samples: int, rng: np.random.Generator
) -> Tensor:
    """Monte-Carlo estimate of the intensity integral over the domain.

    ``intensity`` takes (times (n,), locations (n, d_x)) and returns a tensor
    of per-point rates; the estimate is volume x mean rate, an unbiased
    estimator of the integral, differentiable through ``intensity``.
    """
    if n_samples < 1:
        raise ConfigurationError("n_samples must be >= 1")
    ts, xs = domain.sample_uniform(n_samples, rng)
    lam = intensity(ts, xs)
    if not isinstance(lam, torch.Tensor):
        lam = torch.as_tensor(np.asarray(lam), dtype=DTYPE)
    if not torch.isfinite(lam).all():
        raise EvaluationError("non-finite intensity under the MC integral")
    return domain.volume() * lam.mean()


def stpp_loglik(
    events: EventSeq,
    intensity,
    domain: SpaceTimeDomain,
    n_mc: int | None,
    rng: np.random.Generator | None,
    *,
    integral: Tensor | float | None = None,
) -> Tensor:
    """Point-process log-likelihood: event term minus the intensity integral.

    The compensator integral is estimated by Monte Carlo with ``n_mc`` uniform
    points unless a closed-form value is supplied via ``integral``, in which
    case the result is exact for the given intensity.
    """
    if integral is None:
        integral = mc_intensity_integral(intensity, domain, n_mc, rng)
    elif not isinstance(integral, torch.Tensor):
        integral = torch.as_tensor(float(integral), dtype=DTYPE)
    if len(events) == 0:
        return -integral
    for t, x in zip(events.times, events.locations):
        if not domain.contains(t, x):
            raise DomainError(f"event at t={t:.6g} lies outside the domain")
    lam = intensity(events.times, events.locations)
    if not isinstance(lam, torch.Tensor):
        lam = torch.as_tensor(np.asarray(lam), dtype=DTYPE)
    bad = (lam <= 0).nonzero()
    if bad.numel():
        raise EvaluationError(
            f"non-positive intensity at event index {int(bad[0, 0])}"
        )
    return lam.log().sum() - integral
