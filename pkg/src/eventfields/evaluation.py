"""Forecast evaluation: MAE, event-averaged log-likelihood, baselines, benchmarks.

Metrics are computed per trajectory on the target window (everything after the
context cut) and averaged, so the headline numbers are exactly the mean of the
per-trajectory breakdown. Two reference predictors calibrate the results: the
median of the training marks, and the maximum-likelihood constant intensity
fitted on the training target windows.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass

import numpy as np
import torch

from . import __version__
from .datagen import Dataset, Trajectory
from .errors import ConfigurationError, EvaluationError
from .model import (
    Checkpoint,
    ModelConfig,
    decode_many,
    dynamics_fn,
    encode,
    intensity_head,
    latent_path,
    observe,
    reparameterize,
)
from .nn import ParamSet, as_tensor, linear_apply, mlp_apply
from .odeint import LatentPath, dopri5_solve, interpolate_latent_many, make_sparse_grid
from .pointprocess import SpaceTimeDomain, stpp_loglik
from .seeding import BENCH, EVALUATION, rng_stream
from .training import ODE_ATOL, ODE_RTOL, TrainConfig, train_loop

logger = logging.getLogger(__name__)


def _context(traj: Trajectory):
    c = slice(0, traj.ctx_len)
    return traj.times[c], traj.locations[c], traj.marks[c]


def target_domain(traj: Trajectory) -> SpaceTimeDomain:
    """Space-time box holding the trajectory's target events."""
    return SpaceTimeDomain(
        (float(traj.times[traj.ctx_len]), float(traj.times[-1])),
        tuple((0.0, 1.0) for _ in range(traj.d_x)),
    )


def predict_observation(
    ckpt: Checkpoint,
    context: tuple[np.ndarray, np.ndarray, np.ndarray],
    t,
    x,
    n_samples: int,
    rng: np.random.Generator,
    t_max: float | None = None,
) -> np.ndarray:
    """Posterior-predictive mean of the marks at (t, x) given the context.

    Draws n_samples latent initial states from q, propagates them through one
    shared batched ODE solve over [first context time, t_max], and averages
    the decoded observation means. Accepts vectors of query times/locations.
    """
    if n_samples < 1:
        raise ConfigurationError("n_samples must be >= 1")
    params, config = ckpt.params, ckpt.config
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    xs = np.asarray(x, dtype=float).reshape(ts.size, config.d_x)
    ctx_t, ctx_x, ctx_y = context
    psi = encode(params, config, ctx_t, ctx_x, ctx_y)
    eps = as_tensor(rng.standard_normal((n_samples, config.d_z)))
    z1 = psi.mu[None, :] + torch.sqrt(psi.var)[None, :] * eps
    horizon = float(ts.max()) if t_max is None else float(t_max)
    with torch.no_grad():
        path = latent_path(z1, float(ctx_t[0]), horizon, params, config)
        z = interpolate_latent_many(path, ts)  # (m, n_samples, d_z)
        flat = z.reshape(-1, config.d_z)
        x_rep = np.repeat(xs, n_samples, axis=0)
        u = decode_many_states(flat, x_rep, params, config)
        y = observe(u)[..., : config.d_y].reshape(ts.size, n_samples, config.d_y)
    return y.mean(dim=1).numpy()


def decode_many_states(z, xs, params: ParamSet, config: ModelConfig):
    """Decoder applied to pre-interpolated latents (helper for batched paths)."""
    h = z + linear_apply(params, "proj_x", as_tensor(xs))
    return mlp_apply(config.decoder_spec(), params, h, "decoder")


def eval_process_loglik(
    ckpt: Checkpoint,
    context: tuple[np.ndarray, np.ndarray, np.ndarray],
    target: tuple[np.ndarray, np.ndarray],
    domain: SpaceTimeDomain,
    mc_points: int,
    rng: np.random.Generator,
    t_first: float | None = None,
) -> float:
    """Per-event log-likelihood of the target events under the fitted process.

    One posterior sample conditions the latent path; the intensity integral
    uses ``mc_points`` uniform space-time samples over ``domain``; the total
    is divided by the number of target events.
    """
    tgt_t, tgt_x = target
    if tgt_t.size == 0:
        raise EvaluationError("process log-likelihood needs at least one target event")
    params, config = ckpt.params, ckpt.config
    ctx_t, ctx_x, ctx_y = context
    psi = encode(params, config, ctx_t, ctx_x, ctx_y)
    z1 = reparameterize(psi, as_tensor(rng.standard_normal(config.d_z)))
    start = float(ctx_t[0]) if t_first is None else float(t_first)
    with torch.no_grad():
        path = latent_path(z1, start, float(max(tgt_t.max(), domain.t_range[1])),
                           params, config)

        def lam(ts, xs):
            u = decode_many(path, ts, xs, params, config)
            return intensity_head(u, params, config)

        total = stpp_loglik(
            _as_events(tgt_t, tgt_x), lam, domain, mc_points, rng
        )
    return float(total) / tgt_t.size


def _as_events(times: np.ndarray, locations: np.ndarray):
    from .pointprocess import EventSeq

    return EventSeq(times, locations)


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------


def median_baseline(train: list[Trajectory]) -> np.ndarray:
    """Constant predictor: per-dimension median of every training mark."""
    if not train:
        raise ConfigurationError("median baseline needs a non-empty train split")
    marks = np.concatenate([t.marks for t in train])
    return np.median(marks, axis=0)


def const_intensity_baseline(train: list[Trajectory]) -> float:
    """MLE constant rate on the training target windows: count / volume."""
    if not train:
        raise ConfigurationError("intensity baseline needs a non-empty train split")
    count = sum(len(t) - t.ctx_len for t in train)
    volume = sum(target_domain(t).volume() for t in train)
    if volume <= 0:
        raise ConfigurationError("degenerate total target volume")
    return count / volume


def const_intensity_loglik(rate: float, n_events: int, volume: float) -> float:
    """Closed-form per-event log-likelihood of a constant-rate process."""
    return (n_events * np.log(rate) - rate * volume) / n_events


# ---------------------------------------------------------------------------
# Split evaluation
# ---------------------------------------------------------------------------


@dataclass
class TrajectoryEval:
    traj_id: int
    n_context: int
    n_target: int
    mae: float
    event_avg_loglik: float
    median_mae: float
    const_loglik: float


@dataclass
class EvalReport:
    mae: float
    event_avg_loglik: float
    baseline_median_mae: float
    baseline_const_loglik: float
    n_trajectories: int
    n_samples: int
    mc_eval: int
    split: str
    wall_seconds: float
    wall_seconds_per_trajectory: float
    model_config: dict
    run_config: dict | None
    version: str
    per_trajectory: list[dict]

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2)


def evaluate_split(
    ckpt: Checkpoint,
    dataset: Dataset,
    split: str = "test",
    n_samples: int = 10,
    mc_eval: int = 256,
    seed: int = 0,
    run_config: dict | None = None,
) -> EvalReport:
    """Forecast metrics plus baselines over one dataset split.

    Each trajectory gets its own RNG stream, so results do not depend on
    evaluation order. Headline numbers are the plain means of the
    per-trajectory values.
    """
    pairs = [
        (tid, traj)
        for tid, s, traj in zip(dataset.ids, dataset.splits, dataset.trajectories)
        if s == split
    ]
    if not pairs:
        raise EvaluationError(f"split {split!r} is empty")
    train = dataset.split("train")
    median = median_baseline(train)
    rate = const_intensity_baseline(train)

    started = time.perf_counter()
    rows: list[TrajectoryEval] = []
    for i, (tid, traj) in enumerate(pairs):
        rng = rng_stream(seed, EVALUATION, i)
        ctx = _context(traj)
        tgt = slice(traj.ctx_len, len(traj))
        tgt_t, tgt_x, tgt_y = traj.times[tgt], traj.locations[tgt], traj.marks[tgt]

        y_hat = predict_observation(
            ckpt, ctx, tgt_t, tgt_x, n_samples, rng, t_max=float(traj.times[-1])
        )
        mae = float(np.abs(y_hat - tgt_y).mean())

        dom = target_domain(traj)
        ll = eval_process_loglik(
            ckpt, ctx, (tgt_t, tgt_x), dom, mc_eval, rng, t_first=float(traj.times[0])
        )
        rows.append(
            TrajectoryEval(
                traj_id=tid,
                n_context=traj.ctx_len,
                n_target=len(traj) - traj.ctx_len,
                mae=mae,
                event_avg_loglik=ll,
                median_mae=float(np.abs(median - tgt_y).mean()),
                const_loglik=const_intensity_loglik(rate, tgt_t.size, dom.volume()),
            )
        )
    elapsed = time.perf_counter() - started

    return EvalReport(
        mae=float(np.mean([r.mae for r in rows])),
        event_avg_loglik=float(np.mean([r.event_avg_loglik for r in rows])),
        baseline_median_mae=float(np.mean([r.median_mae for r in rows])),
        baseline_const_loglik=float(np.mean([r.const_loglik for r in rows])),
        n_trajectories=len(rows),
        n_samples=n_samples,
        mc_eval=mc_eval,
        split=split,
        wall_seconds=elapsed,
        wall_seconds_per_trajectory=elapsed / len(rows),
        model_config=dataclasses.asdict(ckpt.config),
        run_config=run_config,
        version=__version__,
        per_trajectory=[dataclasses.asdict(r) for r in rows],
    )


# ---------------------------------------------------------------------------
# Latent-state evaluation benchmark
# ---------------------------------------------------------------------------


@dataclass
class BenchRow:
    method: str
    n_points: int
    wall_seconds: float


def bench_latent_eval(
    ckpt: Checkpoint,
    event_time_sets: list[np.ndarray],
    n_grid: int,
    methods: tuple[str, ...] = ("interpolated", "sequential"),
    repeats: int = 5,
    seed: int = 0,
) -> list[BenchRow]:
    """Time latent-state evaluation at dense event times, per method.

    "sequential" asks the adaptive solver to stop at every one of the N event
    times; "interpolated" solves only on the n_grid sparse grid and
    interpolates to the same N times. Per trajectory: one untimed warmup, then
    the median of ``repeats`` runs on the monotonic clock; rows report the
    mean over trajectories for each (method, N).
    """
    params, config = ckpt.params, ckpt.config
    f = dynamics_fn(params, config)
    rng = rng_stream(seed, BENCH)
    rows: list[BenchRow] = []
    with torch.no_grad():
        for method in methods:
            if method not in ("interpolated", "sequential"):
                raise ConfigurationError(f"unknown benchmark method {method!r}")
            by_n: dict[int, list[float]] = {}
            for times in event_time_sets:
                times = np.asarray(times, dtype=float)
                z1 = as_tensor(rng.standard_normal(config.d_z))

                def run():
                    if method == "sequential":
                        dopri5_solve(f, z1, times, ODE_RTOL, ODE_ATOL)
                    else:
                        grid = make_sparse_grid(times[0], times[-1], n_grid)
                        states = dopri5_solve(f, z1, grid.tau, ODE_RTOL, ODE_ATOL)
                        path = LatentPath(grid, torch.stack(states), config.interp)
                        interpolate_latent_many(path, times)

                run()  # warmup, excluded from timing
                samples = []
                for _ in range(repeats):
                    t0 = time.perf_counter()
                    run()
                    samples.append(time.perf_counter() - t0)
                by_n.setdefault(times.size, []).append(float(np.median(samples)))
            for n_points, walls in sorted(by_n.items()):
                rows.append(BenchRow(method, n_points, float(np.mean(walls))))
    return rows


def write_bench_csv(rows: list[BenchRow], path) -> None:
    with open(path, "w") as fh:
        fh.write("method,n_points,wall_seconds\n")
        for r in rows:
            fh.write(f"{r.method},{r.n_points},{r.wall_seconds!r}\n")


# ---------------------------------------------------------------------------
# Ablation sweeps
# ---------------------------------------------------------------------------


ABLATION_KINDS = ("context_size", "grid_resolution", "latent_dim", "component_removal")


@dataclass
class AblationRow:
    sweep_param: str
    value: str
    mae: float
    event_avg_loglik: float
    train_seconds: float


def _with_context_fraction(traj: Trajectory, frac: float) -> Trajectory:
    ctx = max(1, int(round(frac * traj.ctx_len)))
    ctx = min(ctx, len(traj) - 1)
    return Trajectory(traj.times, traj.locations, traj.marks, ctx)


def _shrunk_dataset(dataset: Dataset, frac: float) -> Dataset:
    return Dataset(
        dataset.domain,
        dataset.d_x,
        dataset.d_y,
        dataset.config,
        dataset.ids,
        dataset.splits,
        [_with_context_fraction(t, frac) for t in dataset.trajectories],
    )


def run_ablation(
    kind: str,
    sweep_values,
    dataset: Dataset,
    model_config: ModelConfig,
    train_config: TrainConfig,
    seed: int = 0,
) -> list[AblationRow]:
    """Train one fresh model per sweep cell and evaluate it on the test split.

    Every cell starts from the same master seed, so cells differ only in the
    swept setting. A failing cell is recorded with NaN metrics and the sweep
    continues.
    """
    if kind not in ABLATION_KINDS:
        raise ConfigurationError(
            f"unknown ablation kind {kind!r}; expected one of {ABLATION_KINDS}"
        )
    rows: list[AblationRow] = []
    for value in sweep_values:
        cell_data = dataset
        mc = model_config
        tc = train_config
        label = str(value)
        if kind == "context_size":
            cell_data = _shrunk_dataset(dataset, float(value))
        elif kind == "grid_resolution":
            interp, n = value  # e.g. ("linear", 2)
            mc = dataclasses.replace(model_config, interp=interp, n_grid=int(n))
            label = f"{interp}:{n}"
        elif kind == "latent_dim":
            mc = dataclasses.replace(model_config, d_z=int(value))
        elif kind == "component_removal":
            if value not in ("full", "-stpp", "-obs"):
                raise ConfigurationError(f"unknown component flag {value!r}")
            tc = dataclasses.replace(
                train_config,
                no_stpp=(value == "-stpp"),
                no_obs=(value == "-obs"),
            )
        tc = dataclasses.replace(tc, seed=seed)
        started = time.perf_counter()
        try:
            ckpt, _ = train_loop(cell_data, mc, tc)
            report = evaluate_split(ckpt, cell_data, "test", seed=seed)
            mae, ll = report.mae, report.event_avg_loglik
        except Exception:
            logger.exception("ablation cell %s=%s failed", kind, label)
            mae, ll = float("nan"), float("nan")
        rows.append(
            AblationRow(kind, label, mae, ll, time.perf_counter() - started)
        )
    return rows


def write_ablation_csv(rows: list[AblationRow], path) -> None:
    with open(path, "w") as fh:
        fh.write("sweep_param,value,mae,event_avg_loglik,train_seconds\n")
        for r in rows:
            fh.write(
                f"{r.sweep_param},{r.value},{r.mae!r},{r.event_avg_loglik!r},"
                f"{r.train_seconds!r}\n"
            )


# ---------------------------------------------------------------------------
# Field export (decoded u(t, x) heatmaps)
# ---------------------------------------------------------------------------


def export_field(
    ckpt: Checkpoint,
    traj: Trajectory,
    out_prefix: str,
    n_t: int = 64,
    n_x: int = 64,
) -> tuple[str, str]:
    """Decode the posterior-mean field on a (t, x) grid; write CSV + 8-bit PGM.

    Uses the first spatial dimension for the heatmap's x axis (other
    coordinates fixed at 0.5). Returns the two written paths.
    """
    params, config = ckpt.params, ckpt.config
    ctx_t, ctx_x, ctx_y = _context(traj)
    psi = encode(params, config, ctx_t, ctx_x, ctx_y)
    with torch.no_grad():
        path = latent_path(
            psi.mu, float(traj.times[0]), float(traj.times[-1]), params, config
        )
        ts = np.linspace(traj.times[0], traj.times[-1], n_t)
        xs = np.linspace(0.0, 1.0, n_x)
        tt, xx = np.meshgrid(ts, xs, indexing="ij")
        queries = np.full((tt.size, config.d_x), 0.5)
        queries[:, 0] = xx.ravel()
        u = decode_many(path, tt.ravel(), queries, params, config)
    grid = u[..., 0].reshape(n_t, n_x).numpy()

    csv_path = f"{out_prefix}.csv"
    with open(csv_path, "w") as fh:
        fh.write("t," + ",".join(repr(float(v)) for v in xs) + "\n")
        for ti, row in zip(ts, grid):
            fh.write(repr(float(ti)) + "," + ",".join(repr(float(v)) for v in row) + "\n")

    lo, hi = float(grid.min()), float(grid.max())
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    pixels = np.round((grid - lo) * scale).astype(np.uint8)
    pgm_path = f"{out_prefix}.pgm"
    with open(pgm_path, "wb") as fh:
        fh.write(f"P5\n{n_x} {n_t}\n255\n".encode())
        fh.write(pixels.tobytes())
    return csv_path, pgm_path
