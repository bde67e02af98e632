"""The generative model: set encoder -> posterior -> latent ODE -> decoders.

A trajectory's context events are embedded (separate linear projections of
time, location and mark, summed; no positional encodings), a learnable
aggregation token is appended at the end, and a transformer encoder stack maps
the aggregation output to the variational parameters psi = (mu, sigma^2) of
the latent initial state z_1. Given z_1, the dynamics MLP f defines
dz/dt = f(z), solved on a sparse uniform grid and interpolated in between; the
coordinate decoder phi turns z~(t) + proj(x) into the field value u(t, x);
the intensity head exp(MLP(u)) + floor drives the point process and the
observation head g (identity) the Gaussian mark likelihood.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch

from . import __version__
from .datagen import Trajectory
from .errors import ConfigurationError, ContractError, DatasetFormatError
from .nn import (
    DTYPE,
    MlpSpec,
    ParamSet,
    Tensor,
    as_tensor,
    attention_encoder_apply,
    init_attention_encoder,
    init_linear,
    init_mlp,
    linear_apply,
    mlp_apply,
)
from .odeint import LatentPath, dopri5_solve, interpolate_latent_many, make_sparse_grid

logger = logging.getLogger(__name__)

EXP_CLAMP = 700.0  # exp overflows float64 just above 709


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and observation-model hyperparameters.

    The defaults are the desk-scale setup; `full_scale()` gives the
    full-size configuration.
    """

    d_z: int = 16
    d_model: int = 64
    n_enc_layers: int = 2
    n_heads: int = 4
    h_f: int = 64
    h_phi: int = 64
    h_lambda: int = 64
    n_grid: int = 20
    interp: str = "linear"
    sigma_y: float = 1e-3
    intensity_floor: float = 1e-4
    d_x: int = 1
    d_y: int = 1
    d_u: int = 1

    def __post_init__(self):
        for name in (
            "d_z", "d_model", "n_enc_layers", "n_heads", "h_f", "h_phi",
            "h_lambda", "n_grid", "d_x", "d_y", "d_u",
        ):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"ModelConfig.{name} must be positive")
        if self.sigma_y <= 0 or self.intensity_floor <= 0:
            raise ConfigurationError("sigma_y and intensity_floor must be positive")
        if self.interp not in ("nearest", "linear"):
            raise ConfigurationError(f"unknown interpolation method {self.interp!r}")
        if self.d_model % self.n_heads:
            raise ConfigurationError("d_model must be divisible by n_heads")
        if self.n_grid < 2:
            raise ConfigurationError("n_grid must be at least 2")
        if self.d_y > self.d_u:
            raise ConfigurationError("observation dim cannot exceed state dim")

    @classmethod
    def full_scale(cls, **overrides) -> "ModelConfig":
        base = dict(
            d_z=368, d_model=128, n_enc_layers=4, n_heads=4,
            h_f=368, h_phi=368, h_lambda=256, n_grid=50,
        )
        base.update(overrides)
        return cls(**base)

    # MLP shapes derived from the config
    def dynamics_spec(self) -> MlpSpec:
        return MlpSpec(self.d_z, self.h_f, 3, self.d_z)

    def decoder_spec(self) -> MlpSpec:
        return MlpSpec(self.d_z, self.h_phi, 3, self.d_u)

    def intensity_spec(self) -> MlpSpec:
        return MlpSpec(self.d_u, self.h_lambda, 3, 1)


@dataclass
class VariationalParams:
    """Diagonal-Gaussian posterior over the latent initial state."""

    mu: Tensor  # (d_z,)
    var: Tensor  # (d_z,), positive

    def __post_init__(self):
        if self.mu.shape != self.var.shape:
            raise ContractError("mu and var must share a shape")
        if not bool((self.var > 0).all()):
            raise ContractError("posterior variance must be positive")


def init_params(config: ModelConfig, rng: np.random.Generator) -> ParamSet:
    """Fresh trainable parameters for every component, in a fixed order."""
    params = ParamSet()
    init_linear(params, "embed.t", 1, config.d_model, rng)
    init_linear(params, "embed.x", config.d_x, config.d_model, rng)
    init_linear(params, "embed.y", config.d_y, config.d_model, rng)
    bound = 1.0 / math.sqrt(config.d_model)
    params.add(
        "agg",
        as_tensor(rng.uniform(-bound, bound, size=config.d_model)).requires_grad_(True),
    )
    init_attention_encoder(
        params, "encoder", config.n_enc_layers, config.n_heads, config.d_model, rng
    )
    init_linear(params, "psi.mu", config.d_model, config.d_z, rng)
    init_linear(params, "psi.logvar", config.d_model, config.d_z, rng)
    init_mlp(params, "dynamics", config.dynamics_spec(), rng)
    init_linear(params, "proj_x", config.d_x, config.d_z, rng)
    init_mlp(params, "decoder", config.decoder_spec(), rng)
    init_mlp(params, "intensity", config.intensity_spec(), rng)
    return params


def encode(
    params: ParamSet,
    config: ModelConfig,
    times,
    locations,
    marks,
    pad_mask=None,
) -> VariationalParams:
    """Map context events to the variational parameters of q(z_1).

    Padded rows (pad_mask True) are dropped before embedding, so a padded
    batch row encodes bit-identically to the bare sequence. Permuting the
    events does not change the result: there are no positional encodings and
    the readout is the appended aggregation token.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if times.size == 0:
        raise ContractError("encode() needs a non-empty context")
    locations = np.asarray(locations, dtype=float).reshape(times.size, -1)
    marks = np.asarray(marks, dtype=float).reshape(times.size, -1)
    if pad_mask is not None:
        keep = ~np.asarray(pad_mask, dtype=bool)
        times, locations, marks = times[keep], locations[keep], marks[keep]
    if times.size == 0:
        raise ContractError("encode() needs a non-empty context")

    b = (
        linear_apply(params, "embed.t", as_tensor(times[:, None]))
        + linear_apply(params, "embed.x", as_tensor(locations))
        + linear_apply(params, "embed.y", as_tensor(marks))
    )
    seq = torch.cat([b, params["agg"][None, :]], dim=0)
    out = attention_encoder_apply(
        config.n_enc_layers, config.n_heads, config.d_model, params, seq
    )
    agg_out = out[-1]
    mu = linear_apply(params, "psi.mu", agg_out)
    var = torch.exp(linear_apply(params, "psi.logvar", agg_out))
    return VariationalParams(mu, var)


def reparameterize(psi: VariationalParams, eps: Tensor) -> Tensor:
    """z_1 = mu + sqrt(var) * eps; gradients flow into psi."""
    return psi.mu + torch.sqrt(psi.var) * eps


def sample_latent(psi: VariationalParams, rng: np.random.Generator) -> Tensor:
    return reparameterize(psi, as_tensor(rng.standard_normal(psi.mu.shape[-1])))


def dynamics_fn(params: ParamSet, config: ModelConfig):
    spec = config.dynamics_spec()

    def f(z: Tensor) -> Tensor:
        return mlp_apply(spec, params, z, "dynamics")

    return f


def latent_path(
    z1: Tensor,
    t_first: float,
    t_last: float,
    params: ParamSet,
    config: ModelConfig,
    rtol: float = 1e-5,
    atol: float = 1e-5,
) -> LatentPath:
    """Solve the latent ODE on the sparse grid spanning [t_first, t_last]."""
    grid = make_sparse_grid(t_first, t_last, config.n_grid)
    states = dopri5_solve(dynamics_fn(params, config), z1, grid.tau, rtol, atol)
    return LatentPath(grid, torch.stack(states), config.interp)


def decode_many(path: LatentPath, ts, xs, params: ParamSet, config: ModelConfig) -> Tensor:
    """u(t_i, x_i) for many space-time queries; returns (m, d_u)."""
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    xs = np.asarray(xs, dtype=float).reshape(ts.size, config.d_x)
    z = interpolate_latent_many(path, ts)
    h = z + linear_apply(params, "proj_x", as_tensor(xs))
    return mlp_apply(config.decoder_spec(), params, h, "decoder")


def decode_state(path: LatentPath, t: float, x, params: ParamSet, config: ModelConfig) -> Tensor:
    """Field value u(t, x) at one point (continuous in t for linear interp)."""
    return decode_many(path, np.array([float(t)]), np.atleast_2d(x), params, config)[0]


def intensity_head(u: Tensor, params: ParamSet, config: ModelConfig) -> Tensor:
    """Event rate exp(MLP(u)) + floor; strictly positive by construction.

    Pre-activations beyond the float64 overflow point are clamped (with a
    warning); the clamp's subgradient keeps the backward pass finite.
    """
    pre = mlp_apply(config.intensity_spec(), params, u, "intensity")[..., 0]
    if bool((pre.detach() > EXP_CLAMP).any()):
        logger.warning(
            "intensity pre-activation exceeded %.0f; clamping to avoid overflow",
            EXP_CLAMP,
        )
        pre = torch.clamp(pre, max=EXP_CLAMP)
    return torch.exp(pre) + config.intensity_floor


def observe(u: Tensor) -> Tensor:
    """Observation function g — the identity on the observed components."""
    return u


def observation_loglik(y: Tensor, u: Tensor, config: ModelConfig) -> Tensor:
    """log N(y | g(u), sigma_y^2 I), summed over mark dimensions.

    Accepts single events (d_y,) or stacks (m, d_y); stacked input yields one
    value per event.
    """
    g = observe(u)[..., : config.d_y]
    resid2 = ((y - g) ** 2).sum(dim=-1)
    d_y = y.shape[-1]
    return -0.5 * d_y * math.log(2 * math.pi * config.sigma_y**2) - resid2 / (
        2 * config.sigma_y**2
    )


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    params: ParamSet
    config: ModelConfig
    iteration: int = 0
    rng_state: dict | None = None
    run_config: dict | None = None


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    doc = {
        "version": __version__,
        "model_config": asdict(ckpt.config),
        "iteration": int(ckpt.iteration),
        "rng_state": ckpt.rng_state,
        "run_config": ckpt.run_config,
        "params": json.loads(ckpt.params.to_json()),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path) -> Checkpoint:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise DatasetFormatError(f"invalid checkpoint file {path}: {e.msg}") from e
    for key in ("model_config", "params", "iteration"):
        if key not in doc:
            raise DatasetFormatError(f"checkpoint {path} is missing {key!r}")
    config = ModelConfig(**doc["model_config"])
    params = ParamSet.from_json(json.dumps(doc["params"]))
    return Checkpoint(
        params=params,
        config=config,
        iteration=int(doc["iteration"]),
        rng_state=doc.get("rng_state"),
        run_config=doc.get("run_config"),
    )


def predict_marks(
    params: ParamSet,
    config: ModelConfig,
    traj: Trajectory,
    eps: Tensor | None = None,
    rtol: float = 1e-5,
    atol: float = 1e-5,
) -> Tensor:
    """Decode the mark mean at every target event from the encoded context.

    eps=None uses the posterior mean (the validation-time setting); passing a
    standard-normal draw gives one posterior predictive sample.
    """
    ctx = slice(0, traj.ctx_len)
    psi = encode(params, config, traj.times[ctx], traj.locations[ctx], traj.marks[ctx])
    z1 = psi.mu if eps is None else reparameterize(psi, eps)
    path = latent_path(
        z1, float(traj.times[0]), float(traj.times[-1]), params, config, rtol, atol
    )
    tgt = slice(traj.ctx_len, len(traj))
    u = decode_many(path, traj.times[tgt], traj.locations[tgt], params, config)
    return observe(u)[..., : config.d_y]
