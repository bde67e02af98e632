"""Synthetic marked-event datasets: field -> intensity -> thinning -> JSONL.

A trajectory is produced by simulating (or closing over) a latent field
u(t, x), driving a thinning sampler with the state-dependent intensity
lam = scale * |u_0 - offset|, and recording the observed field components as
marks at the accepted events. Trajectories whose context window holds fewer
than ``min_context`` events are rejected, mirroring the filtering used when
the corpora were assembled.

Two families ship: "burgers" (numerically solved viscous Burgers fields) and
"advection" (closed-form traveling bump, exact ground truth).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from . import __version__
from .errors import ConfigurationError, ContractError, DatasetFormatError, EvaluationError
from .fields import (
    analytic_advection_field,
    field_evaluator,
    periodic_pad_x,
    solve_burgers_1d,
)
from .pointprocess import EventSeq, SpaceTimeDomain, thinning_sample
from .seeding import TRAJECTORY, rng_stream

MIN_CONTEXT = 10
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class IntensitySpec:
    """State-dependent rate lam(u) = scale * |u_0 - offset|."""

    scale: float
    offset: float = 0.0

    def __post_init__(self):
        if self.scale <= 0:
            raise ConfigurationError("intensity scale must be positive")


def intensity_from_field(field_fn, spec: IntensitySpec, component: int = 0):
    """Vectorized intensity callable over a field accessor."""

    def lam(ts, xs):
        u = np.asarray(field_fn(ts, xs))
        return spec.scale * np.abs(u[:, component] - spec.offset)

    return lam


@dataclass
class Trajectory:
    """One marked event sequence with its context/target boundary."""

    times: np.ndarray  # (N,)
    locations: np.ndarray  # (N, d_x)
    marks: np.ndarray  # (N, d_y)
    ctx_len: int

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.locations = np.asarray(self.locations, dtype=float)
        self.marks = np.asarray(self.marks, dtype=float)
        n = self.times.size
        if self.locations.shape[0] != n or self.marks.shape[0] != n:
            raise ContractError("times, locations and marks must agree in length")
        if self.locations.ndim != 2 or self.marks.ndim != 2:
            raise ContractError("locations and marks must be 2-d arrays")
        if n > 1 and not np.all(np.diff(self.times) > 0):
            raise ContractError("event times must be strictly increasing")
        if not 0 <= self.ctx_len <= n:
            raise ContractError(f"ctx_len {self.ctx_len} outside [0, {n}]")

    def __len__(self) -> int:
        return self.times.size

    @property
    def d_x(self) -> int:
        return self.locations.shape[1]

    @property
    def d_y(self) -> int:
        return self.marks.shape[1]

    @property
    def t_ctx_end(self) -> float:
        """First target time, or the horizon end if everything is context."""
        return float(self.times[self.ctx_len]) if self.ctx_len < len(self) else float(
            self.times[-1]
        )


@dataclass(frozen=True)
class GenerationConfig:
    family: str = "advection"
    n_trajectories: int = 250
    t_max: float = 1.0
    ctx_fraction: float = 0.25
    intensity_scale: float = 600.0
    intensity_offset: float = 0.0
    min_context: int = MIN_CONTEXT
    d_x: int = 1
    # advection family
    amplitude: float = 1.0
    speed: float = 1.0
    width: float = 0.1
    # burgers family
    nu: float = 0.02
    n_cells: int = 128
    n_saves: int = 101
    ic_modes: int = 3
    ic_amplitude: float = 0.8

    def __post_init__(self):
        if self.family not in ("advection", "burgers"):
            raise ConfigurationError(f"unknown dataset family {self.family!r}")
        if self.family == "burgers" and self.d_x != 1:
            raise ConfigurationError("the burgers family is one-dimensional")
        if not 0 < self.ctx_fraction < 1:
            raise ConfigurationError("ctx_fraction must lie in (0, 1)")
        if self.n_trajectories < 1 or self.t_max <= 0 or self.min_context < 1:
            raise ConfigurationError("invalid generation sizes")

    def domain(self) -> SpaceTimeDomain:
        return SpaceTimeDomain((0.0, self.t_max), tuple((0.0, 1.0) for _ in range(self.d_x)))


def _burgers_initial_condition(cfg: GenerationConfig, rng: np.random.Generator) -> np.ndarray:
    x = (np.arange(cfg.n_cells) + 0.5) / cfg.n_cells
    u0 = np.zeros(cfg.n_cells)
    for k in range(1, cfg.ic_modes + 1):
        a, b = rng.uniform(-cfg.ic_amplitude / k, cfg.ic_amplitude / k, size=2)
        u0 += a * np.sin(2 * np.pi * k * x) + b * np.cos(2 * np.pi * k * x)
    return u0


def _field_and_bound(cfg: GenerationConfig, rng: np.random.Generator):
    """Per-trajectory field accessor and a safe thinning bound for it."""
    spec = IntensitySpec(cfg.intensity_scale, cfg.intensity_offset)
    if cfg.family == "advection":
        x0 = rng.uniform(0.0, 1.0, size=cfg.d_x)
        field_fn = analytic_advection_field(
            cfg.amplitude, cfg.speed, cfg.width, cfg.d_x, x0
        )
        # u ranges over [0, amplitude], so this bound is exact up to the margin
        lam_max = 1.2 * spec.scale * (abs(cfg.amplitude) + abs(spec.offset))
    else:
        ic = _burgers_initial_condition(cfg, rng)
        grid = solve_burgers_1d(ic, cfg.nu, cfg.t_max, cfg.n_saves)
        field_fn = field_evaluator(periodic_pad_x(grid))
        # interpolation is a convex combination, so the grid max bounds it
        lam_max = 1.2 * spec.scale * float(np.abs(grid.values - spec.offset).max())
    return field_fn, spec, lam_max


def generate_trajectory(
    field_fn,
    spec: IntensitySpec,
    domain: SpaceTimeDomain,
    rng: np.random.Generator,
    lambda_max: float,
    t_ctx: float,
    obs_components=(0,),
    min_context: int = MIN_CONTEXT,
) -> Trajectory | None:
    """One thinning draw over the field; None if the context is too thin."""
    lam = intensity_from_field(field_fn, spec)
    seq: EventSeq = thinning_sample(lam, domain, lambda_max, rng)
    if len(seq) == 0:
        return None
    marks = np.asarray(field_fn(seq.times, seq.locations))[:, list(obs_components)]
    ctx_len = int(np.searchsorted(seq.times, t_ctx, side="left"))
    if ctx_len < min_context or ctx_len == len(seq):
        return None
    return Trajectory(seq.times, seq.locations, marks, ctx_len)


def assign_splits(n: int) -> list[str]:
    """80/10/10 train/val/test by position (trajectories are exchangeable)."""
    n_val = n // 10
    n_test = n // 10
    n_train = n - n_val - n_test
    return ["train"] * n_train + ["val"] * n_val + ["test"] * n_test


@dataclass
class Dataset:
    domain: SpaceTimeDomain
    d_x: int
    d_y: int
    config: dict
    ids: list[int]
    splits: list[str]
    trajectories: list[Trajectory]

    def __len__(self) -> int:
        return len(self.trajectories)

    def split(self, name: str) -> list[Trajectory]:
        if name not in SPLITS:
            raise ConfigurationError(f"unknown split {name!r}")
        return [t for t, s in zip(self.trajectories, self.splits) if s == name]


def generate_dataset(cfg: GenerationConfig, master_seed: int) -> Dataset:
    """Generate the full corpus deterministically from the master seed.

    Each attempt index owns an independent RNG stream, so the result does not
    depend on how many earlier attempts were rejected being retried.
    """
    domain = cfg.domain()
    t_ctx = cfg.t_max * cfg.ctx_fraction
    trajectories: list[Trajectory] = []
    attempts = 0
    max_attempts = 50 * cfg.n_trajectories
    while len(trajectories) < cfg.n_trajectories:
        if attempts >= max_attempts:
            raise EvaluationError(
                f"rejected too many trajectories ({attempts - len(trajectories)}); "
                "intensity scale is likely too low for the context window"
            )
        rng = rng_stream(master_seed, TRAJECTORY, attempts)
        field_fn, spec, lam_max = _field_and_bound(cfg, rng)
        traj = generate_trajectory(
            field_fn, spec, domain, rng, lam_max, t_ctx, min_context=cfg.min_context
        )
        attempts += 1
        if traj is not None:
            trajectories.append(traj)
    config = dataclasses.asdict(cfg)
    config["master_seed"] = int(master_seed)
    return Dataset(
        domain=domain,
        d_x=cfg.d_x,
        d_y=1,
        config=config,
        ids=list(range(len(trajectories))),
        splits=assign_splits(len(trajectories)),
        trajectories=trajectories,
    )


# ---------------------------------------------------------------------------
# JSON Lines persistence
# ---------------------------------------------------------------------------


def write_dataset(ds: Dataset, path) -> None:
    """Header line then one record per trajectory; floats round-trip exactly."""
    with open(path, "w") as fh:
        header = {
            "header": {
                "version": __version__,
                "t_range": list(ds.domain.t_range),
                "x_ranges": [list(r) for r in ds.domain.x_ranges],
                "d_x": ds.d_x,
                "d_y": ds.d_y,
                "config": ds.config,
            }
        }
        fh.write(json.dumps(header) + "\n")
        for tid, split, traj in zip(ds.ids, ds.splits, ds.trajectories):
            rows = np.concatenate([traj.times[:, None], traj.locations, traj.marks], axis=1)
            record = {
                "id": int(tid),
                "split": split,
                "ctx_len": int(traj.ctx_len),
                "events": rows.tolist(),
            }
            fh.write(json.dumps(record) + "\n")


def read_dataset(path) -> Dataset:
    """Inverse of write_dataset; malformed input reports its line number."""

    def fail(line_no, msg):
        raise DatasetFormatError(f"line {line_no}: {msg}", line=line_no)

    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetFormatError("line 1: empty dataset file (missing header)", line=1)
    try:
        head = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"line 1: invalid JSON ({e.msg})", line=1) from e
    if "header" not in head:
        fail(1, "first record must carry the dataset header")
    h = head["header"]
    try:
        domain = SpaceTimeDomain(tuple(h["t_range"]), tuple(map(tuple, h["x_ranges"])))
        d_x, d_y = int(h["d_x"]), int(h["d_y"])
        config = dict(h.get("config", {}))
    except (KeyError, TypeError, ConfigurationError) as e:
        raise DatasetFormatError(f"line 1: bad header ({e})", line=1) from e

    ids, splits, trajectories = [], [], []
    width = 1 + d_x + d_y
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            fail(line_no, f"invalid JSON ({e.msg})")
        for key in ("id", "split", "ctx_len", "events"):
            if key not in rec:
                fail(line_no, f"missing field {key!r}")
        if rec["split"] not in SPLITS:
            fail(line_no, f"unknown split {rec['split']!r}")
        rows = np.asarray(rec["events"], dtype=float)
        if rows.size == 0:
            rows = rows.reshape(0, width)
        if rows.ndim != 2 or rows.shape[1] != width:
            fail(line_no, f"event rows must have {width} columns (t, x, y)")
        try:
            traj = Trajectory(
                rows[:, 0], rows[:, 1 : 1 + d_x], rows[:, 1 + d_x :], int(rec["ctx_len"])
            )
        except ContractError as e:
            fail(line_no, str(e))
        ids.append(int(rec["id"]))
        splits.append(rec["split"])
        trajectories.append(traj)
    return Dataset(domain, d_x, d_y, config, ids, splits, trajectories)
