"""ELBO objective, AdamW with linear warmup, and the training loop.

The per-trajectory objective is

    ELBO = L1 (observation log-lik, all events)
         + L2 (point-process log-lik: event term minus MC intensity integral)
         - L3 (analytic KL between q(z_1) and the standard-normal prior),

maximized with one posterior sample per evaluation and no term weighting.
Minibatches share one batched ODE solve: each trajectory's span is rescaled
onto s in [0, 1] (dw/ds = span * f(w)), so all batch elements ride the same
adaptive steps. ``compute_elbo`` is the reference single-trajectory path; the
finite-difference gradient oracle runs against it with frozen noise.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch

from .datagen import Dataset, Trajectory
from .errors import ConfigurationError, EvaluationError
from .model import (
    Checkpoint,
    ModelConfig,
    VariationalParams,
    encode,
    init_params,
    intensity_head,
    latent_path,
    decode_many,
    observation_loglik,
    reparameterize,
)
from .nn import DTYPE, ParamSet, Tensor, as_tensor, backward, linear_apply, mlp_apply
from .odeint import dopri5_solve
from .seeding import MODEL_INIT, TRAINING, rng_stream

logger = logging.getLogger(__name__)

ODE_RTOL = 1e-5
ODE_ATOL = 1e-5


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    warmup_iters: int = 250
    total_iters: int = 3000
    batch_size: int = 32
    val_every: int = 125
    val_window: int = 10
    mc_train: int = 32
    mc_eval: int = 256
    seed: int = 0
    weight_decay: float = 1e-4
    no_stpp: bool = False
    no_obs: bool = False

    def __post_init__(self):
        if min(self.lr, self.warmup_iters, self.batch_size, self.val_every,
               self.val_window, self.mc_train, self.mc_eval) <= 0:
            raise ConfigurationError("TrainConfig values must be positive")
        if self.total_iters < 0 or self.weight_decay < 0:
            raise ConfigurationError("total_iters and weight_decay must be >= 0")
        if self.total_iters > 0 and self.warmup_iters > self.total_iters:
            raise ConfigurationError("warmup_iters cannot exceed total_iters")


@dataclass
class ElboBreakdown:
    """One ELBO evaluation, kept as tensors so the total can be backpropagated."""

    total: Tensor
    l1_obs: Tensor
    l2_stpp: Tensor
    l3_kl: Tensor

    def floats(self) -> tuple[float, float, float, float]:
        return tuple(
            float(x.detach()) for x in (self.total, self.l1_obs, self.l2_stpp, self.l3_kl)
        )


def kl_diag_gaussian(psi: VariationalParams) -> Tensor:
    """KL(q || N(0, I)) for a diagonal Gaussian, in closed form."""
    return 0.5 * (psi.var + psi.mu**2 - 1.0 - torch.log(psi.var)).sum()


def compute_elbo(
    params: ParamSet,
    config: ModelConfig,
    traj: Trajectory,
    n_mc: int,
    rng: np.random.Generator,
    *,
    eps: Tensor | None = None,
    mc_times: np.ndarray | None = None,
    mc_locs: np.ndarray | None = None,
    no_stpp: bool = False,
    no_obs: bool = False,
    rtol: float = ODE_RTOL,
    atol: float = ODE_ATOL,
) -> ElboBreakdown:
    """Single-trajectory ELBO, following the generative recipe step by step.

    The posterior noise and the MC integration points can be passed in frozen
    (``eps``, ``mc_times``/``mc_locs``) to make the value a deterministic
    function of the parameters — the finite-difference tests rely on this.
    """
    if traj.ctx_len < 1 or traj.ctx_len >= len(traj):
        raise ConfigurationError("trajectory needs a non-empty context and target")
    ctx = slice(0, traj.ctx_len)
    psi = encode(params, config, traj.times[ctx], traj.locations[ctx], traj.marks[ctx])
    if eps is None:
        eps = as_tensor(rng.standard_normal(config.d_z))
    z1 = reparameterize(psi, eps)
    t1, tn = float(traj.times[0]), float(traj.times[-1])
    path = latent_path(z1, t1, tn, params, config, rtol, atol)

    u = decode_many(path, traj.times, traj.locations, params, config)
    l1 = observation_loglik(as_tensor(traj.marks), u, config).sum()

    if mc_times is None:
        mc_times = rng.uniform(t1, tn, size=n_mc)
        mc_locs = rng.uniform(0.0, 1.0, size=(n_mc, config.d_x))
    lam_events = intensity_head(u, params, config)
    u_mc = decode_many(path, mc_times, mc_locs, params, config)
    lam_mc = intensity_head(u_mc, params, config)
    volume = tn - t1  # spatial coordinates are normalized to the unit box
    l2 = lam_events.log().sum() - volume * lam_mc.mean()

    l3 = kl_diag_gaussian(psi)
    zero = torch.zeros((), dtype=DTYPE)
    if no_stpp:
        l2 = zero
    if no_obs:
        l1 = zero
    return ElboBreakdown(l1 + l2 - l3, l1, l2, l3)


# ---------------------------------------------------------------------------
# Batched forward path (shared adaptive steps across the minibatch)
# ---------------------------------------------------------------------------


def _encode_batch(params, config, batch: list[Trajectory]):
    mus, variances = [], []
    for traj in batch:
        ctx = slice(0, traj.ctx_len)
        psi = encode(
            params, config, traj.times[ctx], traj.locations[ctx], traj.marks[ctx]
        )
        mus.append(psi.mu)
        variances.append(psi.var)
    return torch.stack(mus), torch.stack(variances)


def _solve_batch(params, config, z1: Tensor, spans: Tensor, rtol: float, atol: float) -> Tensor:
    """Solve all trajectories on the shared normalized grid s in [0, 1].

    Returns states of shape (n_grid, B, d_z).
    """
    spec = config.dynamics_spec()

    def f(w: Tensor) -> Tensor:
        return spans[:, None] * mlp_apply(spec, params, w, "dynamics")

    s_grid = np.linspace(0.0, 1.0, config.n_grid)
    return torch.stack(dopri5_solve(f, z1, s_grid, rtol, atol))


def _gather_states(states: Tensor, s: np.ndarray, owner: np.ndarray, interp: str) -> Tensor:
    """Interpolated latents at normalized times s, per owning batch element."""
    n = states.shape[0]
    pos = np.clip(s, 0.0, 1.0) * (n - 1)
    owner_t = torch.as_tensor(owner)
    if interp == "nearest":
        idx = np.minimum(np.floor(pos), n - 2).astype(int)
        idx = np.where(pos - idx > 0.5, idx + 1, idx)
        return states[torch.as_tensor(idx), owner_t]
    lo = np.minimum(np.floor(pos), n - 2).astype(int)
    w = torch.as_tensor(pos - lo, dtype=DTYPE)[:, None]
    lo_t = torch.as_tensor(lo)
    return (1.0 - w) * states[lo_t, owner_t] + w * states[lo_t + 1, owner_t]


def _decode_flat(params, config, z: Tensor, xs: np.ndarray) -> Tensor:
    h = z + linear_apply(params, "proj_x", as_tensor(xs))
    return mlp_apply(config.decoder_spec(), params, h, "decoder")


def compute_elbo_batch(
    params: ParamSet,
    config: ModelConfig,
    batch: list[Trajectory],
    n_mc: int,
    rng: np.random.Generator,
    *,
    no_stpp: bool = False,
    no_obs: bool = False,
    rtol: float = ODE_RTOL,
    atol: float = ODE_ATOL,
) -> tuple[Tensor, ElboBreakdown]:
    """Mean negative ELBO over the minibatch plus the averaged breakdown."""
    B = len(batch)
    mu, var = _encode_batch(params, config, batch)
    eps = as_tensor(rng.standard_normal((B, config.d_z)))
    z1 = mu + torch.sqrt(var) * eps

    t1s = np.array([t.times[0] for t in batch])
    spans_np = np.array([t.times[-1] - t.times[0] for t in batch])
    spans = as_tensor(spans_np)
    states = _solve_batch(params, config, z1, spans, rtol, atol)

    s_flat = np.concatenate([(t.times - a) / s for t, a, s in zip(batch, t1s, spans_np)])
    x_flat = np.concatenate([t.locations for t in batch])
    y_flat = as_tensor(np.concatenate([t.marks for t in batch]))
    owner = np.repeat(np.arange(B), [len(t) for t in batch])

    z_ev = _gather_states(states, s_flat, owner, config.interp)
    u_ev = _decode_flat(params, config, z_ev, x_flat)
    owner_t = torch.as_tensor(owner)

    l1_b = torch.zeros(B, dtype=DTYPE).index_add(
        0, owner_t, observation_loglik(y_flat, u_ev, config)
    )

    s_mc = rng.uniform(0.0, 1.0, size=(B, n_mc))
    x_mc = rng.uniform(0.0, 1.0, size=(B * n_mc, config.d_x))
    owner_mc = np.repeat(np.arange(B), n_mc)
    z_mc = _gather_states(states, s_mc.reshape(-1), owner_mc, config.interp)
    u_mc = _decode_flat(params, config, z_mc, x_mc)
    lam_mc = intensity_head(u_mc, params, config).reshape(B, n_mc)
    integral_b = spans * lam_mc.mean(dim=1)
    log_lam_b = torch.zeros(B, dtype=DTYPE).index_add(
        0, owner_t, intensity_head(u_ev, params, config).log()
    )
    l2_b = log_lam_b - integral_b

    l3_b = 0.5 * (var + mu**2 - 1.0 - torch.log(var)).sum(dim=1)

    zero = torch.zeros(B, dtype=DTYPE)
    if no_stpp:
        l2_b = zero
    if no_obs:
        l1_b = zero
    total_b = l1_b + l2_b - l3_b
    loss = -total_b.mean()
    breakdown = ElboBreakdown(
        total_b.mean(), l1_b.mean(), l2_b.mean(), l3_b.mean()
    )
    return loss, breakdown


def predict_marks_batch(
    params: ParamSet,
    config: ModelConfig,
    batch: list[Trajectory],
    rtol: float = ODE_RTOL,
    atol: float = ODE_ATOL,
) -> list[Tensor]:
    """Posterior-mean mark predictions at each trajectory's target events."""
    B = len(batch)
    mu, _ = _encode_batch(params, config, batch)
    t1s = np.array([t.times[0] for t in batch])
    spans_np = np.array([t.times[-1] - t.times[0] for t in batch])
    states = _solve_batch(params, config, mu, as_tensor(spans_np), rtol, atol)
    tgt = [slice(t.ctx_len, len(t)) for t in batch]
    s_flat = np.concatenate(
        [(t.times[s] - a) / sp for t, s, a, sp in zip(batch, tgt, t1s, spans_np)]
    )
    x_flat = np.concatenate([t.locations[s] for t, s in zip(batch, tgt)])
    owner = np.repeat(np.arange(B), [len(t) - t.ctx_len for t in batch])
    u = _decode_flat(params, config, _gather_states(states, s_flat, owner, config.interp), x_flat)
    y_hat = u[..., : config.d_y]
    counts = [len(t) - t.ctx_len for t in batch]
    splits = np.cumsum(counts)[:-1]
    return list(torch.tensor_split(y_hat, list(splits)))


def validation_mae(
    params: ParamSet, config: ModelConfig, batch: list[Trajectory]
) -> float:
    """Mean over trajectories of the target-event MAE at the posterior mean."""
    with torch.no_grad():
        preds = predict_marks_batch(params, config, batch)
    maes = [
        float((p - as_tensor(t.marks[t.ctx_len :])).abs().mean())
        for p, t in zip(preds, batch)
    ]
    return float(np.mean(maes))


# ---------------------------------------------------------------------------
# AdamW
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: ParamSet
    v: ParamSet

    @classmethod
    def fresh(cls, params: ParamSet) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like())


def warmup_lr(config: TrainConfig, iteration: int) -> float:
    return config.lr * min(1.0, iteration / config.warmup_iters)


def adamw_step(
    params: ParamSet,
    grads: ParamSet,
    state: AdamState,
    iteration: int,
    config: TrainConfig,
) -> None:
    """One decoupled-weight-decay Adam update, in place. ``iteration`` is 1-based.

    Non-finite gradients skip the step with a warning rather than poisoning
    the parameters.
    """
    if iteration < 1:
        raise ConfigurationError("iteration numbering starts at 1")
    for name in params.names():
        if not torch.isfinite(grads[name]).all():
            logger.warning("non-finite gradient in %s; skipping step %d", name, iteration)
            return
    beta1, beta2, eps_hat = 0.9, 0.999, 1e-8
    lr_t = warmup_lr(config, iteration)
    with torch.no_grad():
        for name, p in params.items():
            g = grads[name]
            state.m[name].mul_(beta1).add_(g, alpha=1 - beta1)
            state.v[name].mul_(beta2).addcmul_(g, g, value=1 - beta2)
            m_hat = state.m[name] / (1 - beta1**iteration)
            v_hat = state.v[name] / (1 - beta2**iteration)
            if config.weight_decay:
                p.mul_(1 - lr_t * config.weight_decay)
            p.addcdiv_(m_hat, v_hat.sqrt().add_(eps_hat), value=-lr_t)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass
class CurveRow:
    iteration: int
    neg_elbo: float
    l1: float
    l2: float
    l3: float
    val_mae: float | None = None


def write_curve(rows: list[CurveRow], path) -> None:
    with open(path, "w") as fh:
        fh.write("iter,neg_elbo,l1,l2,l3,val_mae\n")
        for r in rows:
            mae = "" if r.val_mae is None else repr(r.val_mae)
            fh.write(
                f"{r.iteration},{r.neg_elbo!r},{r.l1!r},{r.l2!r},{r.l3!r},{mae}\n"
            )


def _sample_batch(
    trajs: list[Trajectory], size: int, rng: np.random.Generator
) -> list[Trajectory]:
    idx = rng.integers(0, len(trajs), size=size)  # with replacement
    return [trajs[i] for i in idx]


def train_loop(
    dataset: Dataset,
    model_config: ModelConfig,
    train_config: TrainConfig,
    run_config: dict | None = None,
    progress: bool = False,
) -> tuple[Checkpoint, list[CurveRow]]:
    """Minibatch ELBO ascent with periodic validation.

    Every ``val_every`` iterations the target-event MAE is measured on one
    random validation minibatch; the parameters are snapshotted whenever the
    rolling mean of the last ``val_window`` validation scores reaches a new
    minimum. The returned checkpoint is the best snapshot (or the final
    parameters if validation never ran) together with the training RNG state
    at the end of the run.
    """
    train = dataset.split("train")
    val = dataset.split("val")
    if not train or not val:
        raise EvaluationError("training needs non-empty train and val splits")

    params = init_params(model_config, rng_stream(train_config.seed, MODEL_INIT))
    rng = rng_stream(train_config.seed, TRAINING)
    state = AdamState.fresh(params)
    rows: list[CurveRow] = []
    val_history: list[float] = []
    best_mean = np.inf
    best_params = params.copy()
    best_iter = 0

    for it in range(1, train_config.total_iters + 1):
        batch = _sample_batch(train, train_config.batch_size, rng)
        loss, bd = compute_elbo_batch(
            params,
            model_config,
            batch,
            train_config.mc_train,
            rng,
            no_stpp=train_config.no_stpp,
            no_obs=train_config.no_obs,
        )
        grads = backward(loss, params)
        adamw_step(params, grads, state, it, train_config)

        row = CurveRow(
            it,
            float(loss.detach()),
            *(float(x.detach()) for x in (bd.l1_obs, bd.l2_stpp, bd.l3_kl)),
        )
        if it % train_config.val_every == 0:
            val_batch = _sample_batch(val, train_config.batch_size, rng)
            row.val_mae = validation_mae(params, model_config, val_batch)
            val_history.append(row.val_mae)
            rolling = float(np.mean(val_history[-train_config.val_window :]))
            if rolling < best_mean:
                best_mean = rolling
                best_params = params.copy()
                best_iter = it
            if progress:
                logger.info(
                    "iter %d  neg_elbo %.4g  val_mae %.4g  (rolling %.4g)",
                    it, row.neg_elbo, row.val_mae, rolling,
                )
        rows.append(row)

    if not val_history:  # never validated: ship the final parameters
        best_params, best_iter = params.copy(), train_config.total_iters
    ckpt = Checkpoint(
        params=best_params,
        config=model_config,
        iteration=best_iter,
        rng_state=rng.bit_generator.state,
        run_config=run_config,
    )
    return ckpt, rows
