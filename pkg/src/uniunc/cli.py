"""Command-line interface.

Subcommands: ``train`` (fit and checkpoint the models), ``eval`` (one
estimator cell from existing checkpoints), ``sweep`` (full matrix plus
metrics and heatmaps), ``render`` (PNG from an existing grid CSV), and
``all`` (sweep with rendering forced on).  Configuration comes from a JSON
file via ``--config`` with ``--seed``, ``--out`` and ``--task`` overrides.

Exit codes: 0 success, 2 invalid configuration or arguments, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .datasets import load_dataset, save_dataset
from .experiments import (
    ConfigError,
    ExperimentConfig,
    GridResult,
    effective_passes,
    grid_csv_name,
    grid_eval,
    load_models,
    prepare_datasets,
    run,
    train_models,
)
from .rng import RngStream


def _add_config_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON experiment config")
    p.add_argument("--out", type=Path, help="output directory override")
    p.add_argument("--seed", type=int, help="seed override")
    p.add_argument("--task", choices=("two-moons", "toy-regression"), help="task override")


def _load_config(args) -> ExperimentConfig:
    config = ExperimentConfig.from_json_file(args.config) if args.config else ExperimentConfig()
    if args.out is not None:
        config = replace(config, output_dir=str(args.out))
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.task is not None:
        config = replace(config, task=args.task, grid=config.grid)
    problems = config.validate()
    if problems:
        raise ConfigError(problems)
    return config


def _cmd_train(args) -> int:
    config = _load_config(args)
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_ds, _ = prepare_datasets(config)
    save_dataset(train_ds, out_dir / "train.csv")
    print(f"training {len(config.eu_methods)} model(s) on {config.task}")
    train_models(config, train_ds, out_dir)
    print(f"checkpoints written to {out_dir}")
    return 0


def _cmd_eval(args) -> int:
    config = _load_config(args)
    if args.eu not in config.eu_methods:
        raise ConfigError([f"eu: {args.eu!r} not in configured methods {list(config.eu_methods)}"])
    if args.iu not in config.iu_methods:
        raise ConfigError([f"iu: {args.iu!r} not in configured methods {list(config.iu_methods)}"])
    if args.sigma < 0:
        raise ConfigError(["sigma: must be non-negative"])
    out_dir = Path(config.output_dir)
    models = load_models(replace(config, eu_methods=(args.eu,)), out_dir)
    spec, params = models[args.eu]
    cell_rng = RngStream(config.seed).child("grid", config.task, args.eu, args.iu)
    result = grid_eval(
        spec,
        params,
        args.iu,
        args.sigma,
        config.resolved_grid(),
        m=effective_passes(config, args.eu),
        n=config.n_iu_samples,
        softmax_draws=config.softmax_draws,
        rng=cell_rng,
        eu_name=args.eu,
        task_name=config.task,
    )
    path = out_dir / grid_csv_name(args.eu, args.iu, args.sigma)
    result.to_csv(path)
    print(f"wrote {path}")
    return 0


def _cmd_sweep(args, force_render: bool = False) -> int:
    config = _load_config(args)
    render = True if force_render else not args.no_render
    run(config, render=render, echo=print)
    return 0


def _cmd_render(args) -> int:
    from .render import render_heatmap

    grid = GridResult.from_csv(args.grid)
    points = load_dataset(args.points) if args.points else None
    path = render_heatmap(grid, args.channel, args.out, points=points)
    print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uniunc",
        description="Train small MLPs and sweep input/epistemic/aleatoric "
        "uncertainty decompositions over evaluation grids.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train and checkpoint all configured models")
    _add_config_options(p_train)

    p_eval = sub.add_parser("eval", help="evaluate one (eu, iu, sigma) cell from checkpoints")
    _add_config_options(p_eval)
    p_eval.add_argument("--eu", required=True, help="EU method of the cell")
    p_eval.add_argument("--iu", required=True, choices=("taylor", "mc"))
    p_eval.add_argument("--sigma", required=True, type=float)

    p_sweep = sub.add_parser("sweep", help="train, evaluate the full matrix, summarize")
    _add_config_options(p_sweep)
    p_sweep.add_argument("--no-render", action="store_true", help="skip heatmap PNGs")

    p_all = sub.add_parser("all", help="sweep with rendering forced on")
    _add_config_options(p_all)

    p_render = sub.add_parser("render", help="render a channel of an existing grid CSV")
    p_render.add_argument("--grid", required=True, type=Path, help="grid CSV path")
    p_render.add_argument("--channel", required=True, help="CSV column to render")
    p_render.add_argument("--out", required=True, type=Path, help="output PNG path")
    p_render.add_argument("--points", type=Path, help="dataset CSV to overlay")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "all":
            args.no_render = False
            return _cmd_sweep(args, force_render=True)
        if args.command == "render":
            return _cmd_render(args)
        parser.error(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print("configuration error:", file=sys.stderr)
        for problem in exc.problems:
            print(f"  - {problem}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
