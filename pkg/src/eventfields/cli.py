"""Command-line entry point: gen / train / eval / bench / ablate / export-field.

Every subcommand reads an optional flat config file plus repeatable
``--set key=value`` overrides, and a single ``--seed`` from which all
subsystem random streams are derived. Logs go to stderr without color
(``NO_COLOR`` is honored trivially). Exit codes: 0 success, 1 usage error,
2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np
import torch

from . import __version__
from .config import (
    RunConfig,
    build_model_config,
    build_train_config,
    generation_config,
    parse_config_file,
    parse_overrides,
    parse_value_list,
    resolve_config,
)
from .datagen import generate_dataset, read_dataset, write_dataset
from .errors import ConfigurationError, EventFieldsError
from .evaluation import (
    bench_latent_eval,
    evaluate_split,
    export_field,
    run_ablation,
    write_ablation_csv,
    write_bench_csv,
)
from .model import Checkpoint, init_params, load_checkpoint, save_checkpoint
from .seeding import MODEL_INIT, rng_stream
from .training import train_loop, write_curve

logger = logging.getLogger("eventfields")

USAGE_EXIT = 1
RUNTIME_EXIT = 2


class _Parser(argparse.ArgumentParser):
    """argparse's default usage-error exit code is 2; this CLI reserves 2 for
    runtime failures, so usage problems exit 1 instead."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_EXIT, f"{self.prog}: error: {message}\n")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one config key (repeatable)",
    )
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("--threads", type=int, default=1, help="torch thread cap")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")


def build_parser() -> _Parser:
    parser = _Parser(prog="eventfields", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("gen", parents=[], help="generate a synthetic dataset")
    _add_common(p)
    p.add_argument("--out", required=True, help="output dataset path (.jsonl)")

    p = sub.add_parser("train", help="train a model on a dataset")
    _add_common(p)
    p.add_argument("--data", required=True, help="dataset file from `gen`")
    p.add_argument("--out-dir", required=True, help="directory for checkpoint + curve")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--out", required=True, help="report.json path")

    p = sub.add_parser("bench", help="time interpolated vs sequential latent evaluation")
    _add_common(p)
    p.add_argument("--checkpoint", help="optional checkpoint (default: fresh init)")
    p.add_argument("--out", required=True, help="bench.csv path")

    p = sub.add_parser("ablate", help="sweep configs and component removals")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="ablation.csv path")
    p.add_argument(
        "--kinds",
        default="context_size,grid_resolution,latent_dim,component_removal",
        help="comma-separated subset of sweeps to run",
    )

    p = sub.add_parser("export-field", help="decode u(t, x) heatmaps to CSV/PGM")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--index", type=int, default=0, help="test-trajectory index")
    p.add_argument("--out-prefix", required=True)

    return parser


def _resolve(args) -> RunConfig:
    file_pairs = parse_config_file(args.config) if args.config else None
    return resolve_config(file_pairs, parse_overrides(args.overrides))


def _require_file(path: str) -> str:
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such file: {path}")
    return path


def _artifact_config(cfg: RunConfig, seed: int) -> dict:
    doc = cfg.as_dict()
    doc["seed"] = seed
    return doc


def cmd_gen(args) -> int:
    cfg = _resolve(args)
    ds = generate_dataset(generation_config(cfg), args.seed)
    ds.config.update({"run_config": _artifact_config(cfg, args.seed), "version": __version__})
    write_dataset(ds, args.out)
    logger.info("wrote %d trajectories to %s", len(ds), args.out)
    return 0


def cmd_train(args) -> int:
    cfg = _resolve(args)
    ds = read_dataset(_require_file(args.data))
    model_cfg = build_model_config(cfg, ds.d_x, ds.d_y, ds.d_y)
    train_cfg = build_train_config(cfg, args.seed)
    ckpt, rows = train_loop(
        ds, model_cfg, train_cfg, run_config=_artifact_config(cfg, args.seed),
        progress=True,
    )
    os.makedirs(args.out_dir, exist_ok=True)
    ckpt_path = os.path.join(args.out_dir, "checkpoint.json")
    curve_path = os.path.join(args.out_dir, "curve.csv")
    save_checkpoint(ckpt, ckpt_path)
    write_curve(rows, curve_path)
    logger.info("best iteration %d; wrote %s and %s", ckpt.iteration, ckpt_path, curve_path)
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve(args)
    ckpt = load_checkpoint(_require_file(args.checkpoint))
    ds = read_dataset(_require_file(args.data))
    report = evaluate_split(
        ckpt,
        ds,
        split=args.split,
        n_samples=int(cfg["eval.n_samples"]),
        mc_eval=int(cfg["train.mc_eval"]),
        seed=args.seed,
        run_config=_artifact_config(cfg, args.seed),
    )
    with open(args.out, "w") as fh:
        fh.write(report.to_json())
    logger.info(
        "split=%s mae=%.5g (median baseline %.5g) event_avg_loglik=%.5g (const %.5g)",
        args.split, report.mae, report.baseline_median_mae,
        report.event_avg_loglik, report.baseline_const_loglik,
    )
    return 0


def cmd_bench(args) -> int:
    cfg = _resolve(args)
    if args.checkpoint:
        ckpt = load_checkpoint(_require_file(args.checkpoint))
    else:
        model_cfg = build_model_config(cfg, 1, 1, 1)
        ckpt = Checkpoint(
            params=init_params(model_cfg, rng_stream(args.seed, MODEL_INIT)),
            config=model_cfg,
        )
    n_points = int(cfg["bench.n_points"])
    sets = [np.linspace(0.0, 1.0, n_points) for _ in range(int(cfg["bench.n_trajectories"]))]
    rows = bench_latent_eval(
        ckpt,
        sets,
        n_grid=int(cfg["bench.n_grid"]),
        repeats=int(cfg["bench.repeats"]),
        seed=args.seed,
    )
    write_bench_csv(rows, args.out)
    for r in rows:
        logger.info("%s N=%d: %.4g s", r.method, r.n_points, r.wall_seconds)
    return 0


def cmd_ablate(args) -> int:
    cfg = _resolve(args)
    ds = read_dataset(_require_file(args.data))
    model_cfg = build_model_config(cfg, ds.d_x, ds.d_y, ds.d_y)
    train_cfg = build_train_config(cfg, args.seed)
    train_cfg = dataclasses.replace(
        train_cfg,
        total_iters=int(cfg["ablate.total_iters"]),
        warmup_iters=min(train_cfg.warmup_iters, int(cfg["ablate.total_iters"])),
    )
    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    rows = []
    for kind in kinds:
        if kind == "context_size":
            values = parse_value_list(cfg["ablate.context_values"], float)
        elif kind == "grid_resolution":
            methods = parse_value_list(cfg["ablate.grid_methods"], str)
            grids = parse_value_list(cfg["ablate.grid_values"], int)
            values = [(m, n) for m in methods for n in grids]
        elif kind == "latent_dim":
            values = parse_value_list(cfg["ablate.latent_values"], int)
        elif kind == "component_removal":
            values = ["full", "-stpp", "-obs"]
        else:
            raise ConfigurationError(f"unknown ablation kind {kind!r}")
        rows.extend(run_ablation(kind, values, ds, model_cfg, train_cfg, seed=args.seed))
    write_ablation_csv(rows, args.out)
    _log_ablation_trends(rows)
    return 0


def _log_ablation_trends(rows) -> None:
    """Soft qualitative checks, reported but never gating."""
    ctx = [r for r in rows if r.sweep_param == "context_size"]
    if len(ctx) >= 2:
        ordered = sorted(ctx, key=lambda r: float(r.value))
        trend = all(
            b.mae <= a.mae * 1.05 for a, b in zip(ordered, ordered[1:])
        )
        logger.info(
            "trend check: MAE non-increasing with context size (within 5%%): %s",
            "yes" if trend else "no",
        )
    comp = {r.value: r for r in rows if r.sweep_param == "component_removal"}
    if "full" in comp and "-obs" in comp:
        logger.info(
            "trend check: removing the observation term lowers process loglik: %s",
            "yes" if comp["-obs"].event_avg_loglik < comp["full"].event_avg_loglik else "no",
        )
    if "full" in comp and "-stpp" in comp:
        logger.info(
            "component removal MAE: full=%.5g -stpp=%.5g",
            comp["full"].mae, comp["-stpp"].mae,
        )


def cmd_export_field(args) -> int:
    _resolve(args)  # validates config keys even though none are used here
    ckpt = load_checkpoint(_require_file(args.checkpoint))
    ds = read_dataset(_require_file(args.data))
    test = ds.split("test") or ds.trajectories
    if not 0 <= args.index < len(test):
        raise ConfigurationError(
            f"--index {args.index} out of range for {len(test)} trajectories"
        )
    csv_path, pgm_path = export_field(ckpt, test[args.index], args.out_prefix)
    logger.info("wrote %s and %s", csv_path, pgm_path)
    return 0


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "ablate": cmd_ablate,
    "export-field": cmd_export_field,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return USAGE_EXIT
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    torch.set_num_threads(max(1, args.threads))
    try:
        return COMMANDS[args.command](args)
    except ConfigurationError as e:
        print(f"eventfields {args.command}: {e}", file=sys.stderr)
        return USAGE_EXIT
    except (EventFieldsError, OSError, json.JSONDecodeError) as e:
        print(f"eventfields {args.command}: {e}", file=sys.stderr)
        return RUNTIME_EXIT


if __name__ == "__main__":
    sys.exit(main())
