"""Flat-config parsing, typed resolution, and dataclass builders."""

import pytest

from eventfields.config import (
    RunConfig,
    build_model_config,
    build_train_config,
    default_config,
    generation_config,
    parse_config_file,
    parse_config_text,
    parse_overrides,
    parse_value_list,
    resolve_config,
)
from eventfields.errors import ConfigurationError


def test_default_config_covers_all_namespaces():
    cfg = default_config()
    for key in (
        "data.family",
        "data.n_trajectories",
        "model.preset",
        "model.d_z",
        "train.lr",
        "train.total_iters",
        "eval.n_samples",
        "bench.n_points",
        "ablate.total_iters",
    ):
        assert key in cfg
    assert cfg["model.preset"] == "desk"
    assert cfg["train.lr"] == 1e-3


def test_parse_config_text_basic():
    text = """
    # a comment
    data.n_trajectories = 17   # trailing comment
    train.lr = 0.01
    """
    pairs = parse_config_text(text)
    assert pairs == {"data.n_trajectories": "17", "train.lr": "0.01"}


@pytest.mark.parametrize(
    "text,fragment",
    [
        ("data.n_trajectories 17", "expected 'key = value'"),
        ("= 17", "empty key or value"),
        ("train.lr =", "empty key or value"),
        ("a = 1\na = 2", "duplicate key"),
    ],
)
def test_parse_config_text_errors_carry_line_numbers(text, fragment):
    with pytest.raises(ConfigurationError, match=fragment):
        parse_config_text(text, source="demo.cfg")
    try:
        parse_config_text("ok = 1\nbroken", source="demo.cfg")
    except ConfigurationError as e:
        assert "demo.cfg:2" in str(e)


def test_parse_config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("train.total_iters = 5\n")
    assert parse_config_file(path) == {"train.total_iters": "5"}


def test_parse_overrides():
    assert parse_overrides(["a.b=1", "c = x"]) == {"a.b": "1", "c": "x"}
    with pytest.raises(ConfigurationError):
        parse_overrides(["missing-separator"])


def test_resolve_config_precedence_and_typing():
    cfg = resolve_config(
        {"train.lr": "0.5", "data.n_trajectories": "9"},
        {"train.lr": "0.25", "train.no_stpp": "true"},
    )
    assert cfg["train.lr"] == 0.25  # override beats file
    assert cfg["data.n_trajectories"] == 9 and isinstance(cfg["data.n_trajectories"], int)
    assert cfg["train.no_stpp"] is True
    assert cfg.explicit == {"train.lr", "data.n_trajectories", "train.no_stpp"}


def test_resolve_config_rejects_unknown_and_bad_values():
    with pytest.raises(ConfigurationError, match="unknown config key"):
        resolve_config({"train.momentum": "0.9"}, None)
    with pytest.raises(ConfigurationError, match="bad value"):
        resolve_config({"train.total_iters": "many"}, None)
    with pytest.raises(ConfigurationError, match="bad value"):
        resolve_config({"train.no_obs": "1"}, None)


def test_run_config_text_round_trip():
    cfg = resolve_config(None, {"train.no_obs": "true", "model.d_z": "4"})
    text = cfg.to_text()
    back = resolve_config(parse_config_text(text), None)
    assert back.values == cfg.values
    assert isinstance(back["train.no_obs"], bool)


def test_generation_config_builder():
    cfg = resolve_config(None, {"data.n_trajectories": "7", "data.family": "burgers"})
    gen = generation_config(cfg)
    assert gen.n_trajectories == 7 and gen.family == "burgers"


def test_build_model_config_presets_and_overrides():
    base = resolve_config(None, None)
    desk = build_model_config(base, d_x=2, d_y=1, d_u=1)
    assert (desk.d_z, desk.d_x, desk.d_y) == (16, 2, 1)

    full = build_model_config(
        resolve_config(None, {"model.preset": "full"}), 1, 1, 1
    )
    assert (full.d_z, full.n_grid) == (368, 50)

    mixed = build_model_config(
        resolve_config(None, {"model.preset": "full", "model.n_grid": "5"}), 1, 1, 1
    )
    assert (mixed.d_z, mixed.n_grid) == (368, 5)

    with pytest.raises(ConfigurationError, match="model.preset"):
        build_model_config(
            RunConfig({**base.values, "model.preset": "huge"}), 1, 1, 1
        )


def test_build_train_config():
    cfg = resolve_config(None, {"train.total_iters": "11", "train.warmup_iters": "3"})
    tc = build_train_config(cfg, seed=5)
    assert (tc.total_iters, tc.warmup_iters, tc.seed) == (11, 3, 5)


def test_parse_value_list():
    assert parse_value_list("2, 5,20", int) == [2, 5, 20]
    assert parse_value_list("0.25,1.0") == [0.25, 1.0]
    assert parse_value_list("linear, nearest", str) == ["linear", "nearest"]
    assert parse_value_list(" ,", int) == []
