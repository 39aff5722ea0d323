"""refnet command line: train, predict, score.

train writes a TinyNet checkpoint as .fta; predict writes a prediction
dump directory (per-image .fta plus manifest.json); score prints the
validation pixel accuracy as the final stdout line, which is the
contract expected by external coefficient-search drivers.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from refnet import fta
from refnet.model import (
    DivergenceError,
    pixel_accuracy,
    predict_split,
    train,
)
from refnet.task import SPLITS, TaskConfig


def _task_config(args) -> TaskConfig:
    return TaskConfig(
        seed=args.task_seed,
        num_classes=args.classes,
        noise=args.noise,
    )


def _add_task_args(p):
    p.add_argument("--task-seed", type=int, default=0)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--noise", type=float, default=0.10)


def cmd_train(args) -> int:
    config = _task_config(args)
    snapshot_dir = Path(args.snapshot_dir) if args.snapshot_dir else None
    if snapshot_dir:
        snapshot_dir.mkdir(parents=True, exist_ok=True)

    def hook(cycle, params):
        if snapshot_dir:
            fta.write(snapshot_dir / f"cycle{cycle:02d}.fta", params)

    params = train(
        config,
        seed=args.seed,
        epochs=args.epochs,
        lr=args.lr,
        cycles=args.cycles,
        snapshot_hook=hook if snapshot_dir else None,
    )
    fta.write(args.output, params)
    print(f"checkpoint written to {args.output}")
    return 0


def cmd_predict(args) -> int:
    config = _task_config(args)
    params = fta.read(args.checkpoint)
    outputs = predict_split(params, config, args.split)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    image_ids = []
    for i, (labels, confidence, probs) in enumerate(outputs):
        image_id = f"{args.split}{i:03d}"
        image_ids.append(image_id)
        tensors = {"labels": labels, "confidence": confidence, "probs": probs}
        if args.labels_only:
            tensors = {"labels": labels}
        fta.write(out / f"{image_id}.fta", tensors)
    manifest = {
        "image_ids": image_ids,
        "num_classes": config.num_classes,
        "ignore_label": 255,
    }
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"wrote {len(image_ids)} images to {out}")
    return 0


def cmd_predict_gt(args) -> int:
    # Ground-truth dump for the same split, in the same directory format.
    from refnet.task import generate_split

    config = _task_config(args)
    _, gts = generate_split(config, args.split)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    image_ids = []
    for i, gt in enumerate(gts):
        image_id = f"{args.split}{i:03d}"
        image_ids.append(image_id)
        fta.write(out / f"{image_id}.fta", {"labels": gt})
    manifest = {
        "image_ids": image_ids,
        "num_classes": config.num_classes,
        "ignore_label": 255,
    }
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"wrote {len(image_ids)} label maps to {out}")
    return 0


def cmd_score(args) -> int:
    config = _task_config(args)
    params = fta.read(args.checkpoint)
    acc = pixel_accuracy(params, config, args.split)
    print(repr(acc))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="refnet",
                                     description="Tiny reference segmentation trainer")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("train", help="train a TinyNet and write the checkpoint")
    p.add_argument("--seed", type=int, required=True, help="initialization seed")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--cycles", type=int, default=1)
    p.add_argument("--snapshot-dir", type=Path, default=None,
                   help="also write per-cycle snapshot checkpoints here")
    p.add_argument("-o", "--output", type=Path, required=True)
    _add_task_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="write a prediction dump for a split")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("--split", choices=SPLITS, default="val")
    p.add_argument("--labels-only", action="store_true")
    p.add_argument("-o", "--output", type=Path, required=True)
    _add_task_args(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("ground-truth", help="write the split's label maps")
    p.add_argument("--split", choices=SPLITS, default="val")
    p.add_argument("-o", "--output", type=Path, required=True)
    _add_task_args(p)
    p.set_defaults(func=cmd_predict_gt)

    p = sub.add_parser("score", help="print validation pixel accuracy")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("--split", choices=SPLITS, default="val")
    _add_task_args(p)
    p.set_defaults(func=cmd_score)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (DivergenceError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
