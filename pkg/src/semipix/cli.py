"""Command-line entry points.

Subcommands: curate (pseudo-label a probability tensor), train, ablate,
eval, dump-reprs. Exit code 0 on success, 1 on validation problems (bad
config values, malformed inputs), 2 on runtime failures.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .config import ConfigError, load_config
from .partition import assign_pseudo_labels, entropy_threshold, prediction_entropy
from .sampling import NEGATIVE_SOURCES
from .tensors import IGNORE, FormatError, ValidationError, tensor_read, tensor_write
from .trainer import (
    NonFiniteLossError,
    ablation_to_csv,
    build_datasets,
    evaluate_miou,
    load_checkpoint,
    reliability_ablation,
    run_training,
)
from . import model

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


def cmd_curate(args) -> int:
    probs = tensor_read(args.probs)
    from .tensors import validate_prob_batch

    batch = validate_prob_batch(probs)
    entropies = prediction_entropy(batch)
    threshold = entropy_threshold(entropies, args.alpha)
    pseudo = assign_pseudo_labels(batch, threshold, entropies=entropies)
    tensor_write(pseudo.labels, f"{args.out}.labels.u2tn")
    tensor_write(entropies, f"{args.out}.entropy.u2tn")
    reliable = float((pseudo.labels != IGNORE).mean())
    print(f"entropy_threshold = {threshold!r}")
    print(f"reliable_fraction = {reliable!r}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    result = run_training(cfg, out_dir=args.out)
    print(f"final miou_val = {result.final_miou!r}")
    print(f"metrics written to {args.out}/metrics.csv")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    if not modes:
        raise ConfigError("--modes must name at least one mode")
    for mode in modes:
        if mode not in NEGATIVE_SOURCES:
            raise ConfigError(f"unknown mode {mode!r}; choose from {NEGATIVE_SOURCES}")
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --seeds list: {exc}") from exc
    if not seeds:
        raise ConfigError("--seeds must name at least one seed")
    runs, summaries = reliability_ablation(cfg, modes, seeds)
    ablation_to_csv(runs, summaries, args.out)
    for s in summaries:
        print(f"{s['mode']}: mean={s['mean']:.4f} std={s['std']:.4f}")
    print(f"table written to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt["dims"]["num_classes"] != cfg.num_classes:
        raise ConfigError(
            f"checkpoint has {ckpt['dims']['num_classes']} classes, config has {cfg.num_classes}"
        )
    _, val_data = build_datasets(cfg)
    ious, mean = evaluate_miou(
        ckpt["teacher"], val_data.features, val_data.labels, cfg.num_classes
    )
    for cls, iou in enumerate(ious):
        shown = "absent" if np.isnan(iou) else f"{iou:.4f}"
        print(f"class {cls}: iou = {shown}")
    print(f"mean iou = {mean:.4f}")
    return EXIT_OK


def cmd_dump_reprs(args) -> int:
    cfg = load_config(args.config)
    ckpt = load_checkpoint(args.checkpoint)
    train_data, _ = build_datasets(cfg)
    reprs = model.forward(ckpt["teacher"], train_data.features).reprs
    tensor_write(reprs, args.out)
    print(f"wrote {reprs.shape} representations to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semipix",
        description="Semi-supervised dense labeling with entropy-partitioned "
        "pseudo-labels and contrastive negative mining, on synthetic data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("curate", help="pseudo-label a probability tensor file")
    p.add_argument("--probs", required=True, help="input probability tensor (.u2tn)")
    p.add_argument("--alpha", required=True, type=float, help="unreliable fraction in [0, 1]")
    p.add_argument("--out", required=True, help="output prefix for .labels/.entropy files")
    p.set_defaults(func=cmd_curate)

    p = sub.add_parser("train", help="train on the synthetic task")
    p.add_argument("--config", required=True, help="run config file")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="compare negative-source modes across seeds")
    p.add_argument("--config", required=True, help="run config file")
    p.add_argument("--modes", required=True, help="comma-separated subset of "
                   + ",".join(NEGATIVE_SOURCES))
    p.add_argument("--seeds", required=True, help="comma-separated integer seeds")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("eval", help="report per-class IoU for a checkpoint")
    p.add_argument("--checkpoint", required=True, help="checkpoint manifest path")
    p.add_argument("--config", required=True, help="run config file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("dump-reprs", help="write teacher representations for a dataset")
    p.add_argument("--checkpoint", required=True, help="checkpoint manifest path")
    p.add_argument("--config", required=True, help="run config file")
    p.add_argument("--out", required=True, help="output tensor path (.u2tn)")
    p.set_defaults(func=cmd_dump_reprs)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FormatError, ValidationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NonFiniteLossError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # anything else is a runtime failure
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
