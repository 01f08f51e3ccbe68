"""Command line entry point: ``depthattr {generate,train,explain,sweep,report}``.

Log verbosity comes from ``DEPTHATTR_LOG_LEVEL`` (default ``WARNING``).
Exit status is 0 on success and 2 on configuration or input errors.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .attribution import AttributionSettings, RolloutConfig, explain, save_relevance
from .dataset import EmptyDatasetError, load_image
from .harness import (
    DEFAULT_IG_STEPS,
    DEFAULT_LEARNING_RATE,
    DEFAULT_PSI,
    ConfigError,
    SweepConfig,
    parse_override,
    run_sweep,
)
from .metrics import aggregate, aggregates_to_csv, aggregates_to_json, records_from_csv
from .models import ArchSpec, ModelSpecError, build_model, load_model, predict, save_model, train
from .render import render_depth, render_image, render_relevance
from .scenes import generate_dataset, generate_scene

log = logging.getLogger("depthattr")


def _cmd_generate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for scene in generate_dataset(args.seed, args.count, args.height, args.width):
        render_image(scene.image, out / f"{scene.name}.png")
        np.save(out / f"{scene.name}_depth.npy", scene.depth_gt)
    print(f"wrote {args.count} scenes to {out}")
    return 0


def _cmd_train(args) -> int:
    arch = ArchSpec(height=args.height, width=args.width)
    model = build_model(args.kind, arch, args.seed)
    scenes = generate_dataset(args.data_seed, args.count, arch.height, arch.width)
    model, history = train(model, scenes, args.epochs, args.lr)
    save_model(model, args.out)
    print(f"loss {history[0]:.6f} -> {history[-1]:.6f}; saved {args.out}")
    return 0


def _cmd_explain(args) -> int:
    model = load_model(args.model) if args.model else build_model(args.kind)
    a = model.arch
    if args.image:
        image = load_image(args.image, a.height, a.width)
        stem = Path(args.image).stem
    else:
        scene = generate_scene(args.scene_seed, a.height, a.width)
        image, stem = scene.image, scene.name
    settings = AttributionSettings(ig_steps=args.ig_steps, rollout=RolloutConfig(psi=args.psi))
    relevance = explain(model, image, args.method, settings)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    depth, _ = predict(model, image)
    render_image(image, out / f"{stem}_input.png")
    render_depth(depth, out / f"{stem}_depth.png")
    png = render_relevance(relevance, out / f"{stem}_{args.method}.png")
    save_relevance(relevance, out / f"{stem}_{args.method}.txt")
    print(f"wrote {png}")
    return 0


def _cmd_sweep(args) -> int:
    overrides = dict(parse_override(item) for item in args.set)
    if args.output:
        overrides["output_dir"] = args.output
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.config:
        cfg = SweepConfig.from_file(args.config, overrides)
    else:
        cfg = SweepConfig.from_dict(overrides)
    result = run_sweep(cfg)
    for note in result.skipped:
        print(note)
    print(f"{len(result.records)} records, {len(result.cells)} cells, {len(result.failures)} failed images -> {cfg.output_dir}")
    return 0


def _cmd_report(args) -> int:
    records = records_from_csv(Path(args.records).read_text())
    if not records:
        raise ConfigError(f"{args.records} has no records")
    cells = aggregate(records)
    out = Path(args.out)
    out.write_text(aggregates_to_csv(cells))
    out.with_suffix(".json").write_text(aggregates_to_json(cells))
    print(f"wrote {len(cells)} rows to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="depthattr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset (PNG images + .npy depth)")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--count", type=int, default=32)
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("train", help="train a toy depth model and save it")
    p.add_argument("--kind", choices=("conv", "attention"), default="attention")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data-seed", type=int, default=1000)
    p.add_argument("--count", type=int, default=64)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=DEFAULT_LEARNING_RATE)
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("explain", help="attribute one image with one method")
    p.add_argument("--model", help="model file; default is an untrained seeded model")
    p.add_argument("--kind", choices=("conv", "attention"), default="attention")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--image")
    src.add_argument("--scene-seed", type=int, default=0)
    p.add_argument("--method", default="saliency")
    p.add_argument("--ig-steps", type=int, default=DEFAULT_IG_STEPS)
    p.add_argument("--psi", default=DEFAULT_PSI)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_explain)

    p = sub.add_parser("sweep", help="run the full perturbation evaluation")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--output")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("report", help="re-aggregate an existing records CSV")
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("DEPTHATTR_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ModelSpecError, EmptyDatasetError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
