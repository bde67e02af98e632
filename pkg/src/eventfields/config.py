"""Flat `key = value` run configuration with namespaced keys.

One text format drives every subcommand: lines of ``namespace.key = value``
with ``#`` comments, no nesting. Values are typed by their defaults (bool,
int, float or string). Unknown keys are rejected rather than ignored, and the
fully resolved configuration is echoed into every artifact so outputs are
self-describing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .datagen import GenerationConfig
from .errors import ConfigurationError
from .model import ModelConfig
from .training import TrainConfig

# data.* defaults mirror GenerationConfig; model.*/train.* mirror the
# respective dataclass defaults (model.preset switches the model base).
_GEN_DEFAULTS = GenerationConfig()
_MODEL_DESK = ModelConfig()
_TRAIN_DEFAULTS = TrainConfig()

_MODEL_KEYS = (
    "d_z", "d_model", "n_enc_layers", "n_heads", "h_f", "h_phi", "h_lambda",
    "n_grid", "interp", "sigma_y", "intensity_floor",
)
_TRAIN_KEYS = (
    "lr", "warmup_iters", "total_iters", "batch_size", "val_every",
    "val_window", "mc_train", "mc_eval", "weight_decay", "no_stpp", "no_obs",
)
_DATA_KEYS = (
    "family", "n_trajectories", "t_max", "ctx_fraction", "intensity_scale",
    "intensity_offset", "min_context", "d_x", "amplitude", "speed", "width",
    "nu", "n_cells", "n_saves", "ic_modes", "ic_amplitude",
)


def default_config() -> dict[str, object]:
    cfg: dict[str, object] = {}
    for key in _DATA_KEYS:
        cfg[f"data.{key}"] = getattr(_GEN_DEFAULTS, key)
    cfg["model.preset"] = "desk"
    for key in _MODEL_KEYS:
        cfg[f"model.{key}"] = getattr(_MODEL_DESK, key)
    for key in _TRAIN_KEYS:
        cfg[f"train.{key}"] = getattr(_TRAIN_DEFAULTS, key)
    cfg["eval.n_samples"] = 10
    cfg["bench.n_points"] = 2000
    cfg["bench.n_trajectories"] = 3
    cfg["bench.n_grid"] = 50
    cfg["bench.repeats"] = 5
    cfg["ablate.context_values"] = "0.25,0.5,1.0"
    cfg["ablate.grid_values"] = "2,5,20"
    cfg["ablate.grid_methods"] = "linear,nearest"
    cfg["ablate.latent_values"] = "4,8,16"
    cfg["ablate.total_iters"] = 750
    return cfg


def _coerce(key: str, raw: str, default) -> object:
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false"):
                raise ValueError("expected true or false")
            return low == "true"
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError as e:
        raise ConfigurationError(
            f"bad value for {key}: {raw!r} ({e})"
        ) from e


@dataclass
class RunConfig:
    """Resolved settings plus the set of keys the user set explicitly."""

    values: dict[str, object]
    explicit: set[str] = field(default_factory=set)

    def __getitem__(self, key: str):
        return self.values[key]

    def as_dict(self) -> dict[str, object]:
        return dict(self.values)

    def to_text(self) -> str:
        return "".join(f"{k} = {_render(v)}\n" for k, v in self.values.items())


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Raw key -> string pairs from flat config text; errors carry line numbers."""
    pairs: dict[str, str] = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigurationError(
                f"{source}:{line_no}: expected 'key = value', got {line.strip()!r}"
            )
        key, _, raw = stripped.partition("=")
        key, raw = key.strip(), raw.strip()
        if not key or not raw:
            raise ConfigurationError(f"{source}:{line_no}: empty key or value")
        if key in pairs:
            raise ConfigurationError(f"{source}:{line_no}: duplicate key {key!r}")
        pairs[key] = raw
    return pairs


def parse_config_file(path) -> dict[str, str]:
    with open(path) as fh:
        return parse_config_text(fh.read(), source=str(path))


def parse_overrides(items) -> dict[str, str]:
    """key=value strings from the command line."""
    pairs: dict[str, str] = {}
    for item in items:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} must look like key=value")
        key, _, raw = item.partition("=")
        pairs[key.strip()] = raw.strip()
    return pairs


def resolve_config(
    file_pairs: dict[str, str] | None = None,
    override_pairs: dict[str, str] | None = None,
) -> RunConfig:
    """Defaults <- config file <- command-line overrides, with typed values."""
    values = default_config()
    explicit: set[str] = set()
    for pairs in (file_pairs or {}, override_pairs or {}):
        for key, raw in pairs.items():
            if key not in values:
                raise ConfigurationError(f"unknown config key {key!r}")
            values[key] = _coerce(key, raw, values[key])
            explicit.add(key)
    return RunConfig(values, explicit)


# ---------------------------------------------------------------------------
# Builders: RunConfig -> typed module configs
# ---------------------------------------------------------------------------


def generation_config(cfg: RunConfig) -> GenerationConfig:
    return GenerationConfig(**{key: cfg[f"data.{key}"] for key in _DATA_KEYS})


def build_model_config(cfg: RunConfig, d_x: int, d_y: int, d_u: int) -> ModelConfig:
    """Model architecture from the preset, explicit keys winning over it."""
    preset = cfg["model.preset"]
    if preset == "desk":
        base = _MODEL_DESK
    elif preset == "full":
        base = ModelConfig.full_scale()
    else:
        raise ConfigurationError(f"unknown model.preset {preset!r}")
    kwargs = {key: getattr(base, key) for key in _MODEL_KEYS}
    for key in _MODEL_KEYS:
        if f"model.{key}" in cfg.explicit:
            kwargs[key] = cfg[f"model.{key}"]
    return ModelConfig(d_x=d_x, d_y=d_y, d_u=d_u, **kwargs)


def build_train_config(cfg: RunConfig, seed: int) -> TrainConfig:
    kwargs = {key: cfg[f"train.{key}"] for key in _TRAIN_KEYS}
    return TrainConfig(seed=seed, **kwargs)


def parse_value_list(raw: str, kind=float) -> list:
    return [kind(v.strip()) for v in str(raw).split(",") if v.strip()]
