"""Command-line entry point: ``splatctl <command> [options]``.

Every :class:`RunConfig` key is available as a ``--kebab-case`` flag; a
``--config`` file is applied first and explicit flags override it.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 the run
collapsed (every Gaussian pruned).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .harness import diagnostics, eval_model, sweep, train
from .io.config import ConfigError, RunConfig, load_config, parse_value
from .io.dataset import DatasetError, init_gaussians, load_dataset, save_dataset
from .io.ply import PlyError, export_ply
from .io.synth import synth_scene

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_COLLAPSE = 4

DEFAULT_GRID = "2e-5,5e-5,1e-4,2e-4,5e-4"


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("run configuration")
    group.add_argument("--config", help="key = value file applied before other flags")
    for f in dataclasses.fields(RunConfig):
        # values stay strings here and are typed by the config parser
        group.add_argument(_flag(f.name), dest=f.name, default=None, metavar="VALUE")


def _run_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    changes = {}
    for f in dataclasses.fields(RunConfig):
        text = getattr(args, f.name, None)
        if text is not None:
            changes[f.name] = parse_value(f.name, text)
    try:
        return cfg.replace(**changes)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _dataset(cfg: RunConfig):
    if cfg.dataset:
        return load_dataset(cfg.dataset, prefer_raw=cfg.prefer_raw)
    return synth_scene(cfg.synth_k, cfg.seed, cfg.synth_views, cfg.synth_resolution)[1]


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_synth(args) -> int:
    cfg = _run_config(args)
    gt, dataset = synth_scene(cfg.synth_k, cfg.seed, cfg.synth_views, cfg.synth_resolution)
    save_dataset(dataset, args.out)
    export_ply(gt, Path(args.out) / "ground_truth.ply")
    print(f"wrote {len(dataset)} views and {len(gt)} ground-truth Gaussians to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _run_config(args)
    result = train(cfg, _dataset(cfg))
    _print_json(result.metrics)
    return EXIT_COLLAPSE if result.collapsed else EXIT_OK


def cmd_eval(args) -> int:
    cfg = _run_config(args)
    data = _dataset(cfg)
    try:
        metrics = eval_model(args.model, data)
    except ValueError as exc:
        if isinstance(exc, (DatasetError, PlyError)):
            raise
        raise DatasetError(str(exc)) from exc
    _print_json(metrics)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _run_config(args)
    try:
        grid = [float(x) for x in args.grid.split(",") if x.strip()]
        records, report = sweep(cfg, grid, _dataset(cfg))
    except ValueError as exc:
        if isinstance(exc, DatasetError):
            raise
        raise ConfigError(str(exc)) from exc
    print("lambda_alpha,final_count,test_psnr,test_ssim,wall_s")
    for r in records:
        print(f"{r.lambda_alpha:g},{r.final_count},{r.test_psnr:.4f},{r.test_ssim:.5f},{r.wall_s:.1f}")
    print(f"monotone: {report['monotone']}")
    return EXIT_COLLAPSE if any(r.collapsed for r in records) else EXIT_OK


def cmd_diag(args) -> int:
    hist, sizes = diagnostics(args.checkpoints, args.out)
    print("iteration,n_gaussians,mean_scale")
    for row in sizes:
        print(f"{row['iteration']},{row['n_gaussians']},{row['mean_scale']:.6g}")
    return EXIT_OK


def cmd_export_ply(args) -> int:
    cfg = _run_config(args)
    if args.ground_truth:
        if cfg.dataset:
            raise ConfigError("--ground-truth needs the synthetic scene, not --dataset")
        gaussians = synth_scene(cfg.synth_k, cfg.seed, cfg.synth_views, cfg.synth_resolution)[0]
    else:
        data = _dataset(cfg)
        gaussians = init_gaussians(
            data.init_points, data.init_colors, cfg.n_random_fallback, cfg.seed, cfg.max_sh_degree
        )
    export_ply(gaussians, args.out)
    print(f"wrote {len(gaussians)} Gaussians to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="splatctl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic reference scene")
    p.add_argument("--out", required=True, help="dataset directory to write")
    _add_config_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one model")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a PLY model on the test split")
    p.add_argument("--model", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="train once per lambda_alpha value")
    p.add_argument("--grid", default=DEFAULT_GRID, help="comma-separated, strictly increasing")
    _add_config_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("diag", help="opacity histograms and size evolution from checkpoints")
    p.add_argument("checkpoints", help="run directory or its checkpoints/ folder")
    p.add_argument("--out", help="directory for the CSV outputs")
    p.set_defaults(func=cmd_diag)

    p = sub.add_parser("export-ply", help="write the initial (or ground-truth) Gaussians as PLY")
    p.add_argument("--out", required=True)
    p.add_argument("--ground-truth", action="store_true", help="export the synthetic ground truth")
    _add_config_flags(p)
    p.set_defaults(func=cmd_export_ply)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, PlyError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
