"""Command line front end for training and artifact export.

Mirrors the engine CLI's conventions: one JSON object per result line on
stdout; exit 0 on success, 1 when training aborts (divergence), 2 for
usage errors.
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import ArchConfig, ConfigError, TrainConfig
from .data import load_split
from .export import export_container, export_images
from .train import TrainingDiverged, train


def _emit(obj: dict) -> None:
    print(json.dumps(obj, sort_keys=True))


def _arch_from(args) -> ArchConfig:
    return ArchConfig(
        channels=tuple(int(v) for v in args.channels.split(",")),
        blocks=args.blocks,
        heads=args.heads,
        mlp_ratio=args.mlp_ratio,
    )


def _cmd_train(args) -> int:
    cfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        lr_schedule=args.schedule,
        weight_decay=args.weight_decay,
        quant_levels=args.levels,
        val_fraction=args.val_fraction,
        seed=args.seed,
        out=args.out,
        arch=_arch_from(args),
    )

    def log(stats):
        print(f"epoch {stats.epoch:3d}  loss {stats.mean_loss:.4f}  lr {stats.lr:.2e}",
              file=sys.stderr)

    result = train(cfg, log=log if args.verbose else None)
    export_container(result.model, cfg.out)
    if args.val_images is not None:
        export_images(args.val_images, result.split.val_x, result.split.val_y)
    _emit({
        "command": "train",
        "out": str(cfg.out),
        "epochs": cfg.epochs,
        "quant_levels": cfg.quant_levels,
        "train_accuracy": result.train_accuracy,
        "val_accuracy": result.val_accuracy,
        "train_samples": len(result.split.train_x),
        "val_samples": len(result.split.val_x),
        "seconds": round(result.seconds, 2),
    })
    return 0


def _cmd_export_images(args) -> int:
    split = load_split(args.val_fraction, args.seed)
    x, y = (split.val_x, split.val_y) if args.split == "val" else \
        (split.train_x, split.train_y)
    if args.count is not None:
        x, y = x[:args.count], y[:args.count]
    paths = export_images(args.out, x, y)
    _emit({"command": "export-images", "out": str(args.out), "split": args.split,
           "count": len(paths)})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="toytrainer",
        description="Quantization-aware training on the bundled digits set, "
                    "exporting engine-ready containers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train and export an analog container")
    p.add_argument("--out", required=True, help="container directory to write")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=2e-3)
    p.add_argument("--schedule", choices=("constant", "cosine"), default="cosine")
    p.add_argument("--weight-decay", type=float, default=1e-4)
    p.add_argument("--levels", type=int, default=4, help="activation grid size")
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--channels", default="16,64",
                   help="comma list of conv widths; last one is the embed dim")
    p.add_argument("--blocks", type=int, default=1)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--mlp-ratio", type=float, default=2.0)
    p.add_argument("--val-images", default=None,
                   help="also dump the validation set as raw images here")
    p.add_argument("--verbose", action="store_true", help="per-epoch loss on stderr")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("export-images", help="dump dataset samples as raw image files")
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=("train", "val"), default="val")
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_export_images)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 2
    try:
        return args.fn(args)
    except TrainingDiverged as e:
        print(f"training aborted: {e}", file=sys.stderr)
        return 1
    except (ConfigError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def entry() -> None:
    raise SystemExit(main())
