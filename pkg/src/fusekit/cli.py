"""Command-line entry point tying the toolkit together.

Exit codes: 0 success, 1 runtime error, 2 validation error.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from fusekit import datasets, fixtures, reports
from fusekit.evaluation import (
    DEFAULT_IGNORE_LABEL,
    calibration,
    compute_metrics,
    confusion_matrix,
    deep_ensemble_average,
    oracle_merge,
    oracle_score,
)
from fusekit.fusion import (
    FusionError,
    cosine_similarity,
    fuse_archive_files,
    swa_average,
)
from fusekit.schedule import CosineCycleSchedule, emit_schedule, write_schedule_csv
from fusekit.search import (
    Evaluator,
    EvaluatorError,
    SIMILARITY_WARN_THRESHOLD,
    grid_search_alpha,
    random_simplex_search,
)
from fusekit.tensor_store import (
    ArchiveError,
    Checkpoint,
    CompatibilityError,
    read_archive,
    write_archive,
)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_VALIDATION = 2


class ValidationError(Exception):
    """Bad configuration or inputs; maps to exit code 2."""


def _thread_cap() -> int | None:
    raw = os.environ.get("FUSEKIT_THREADS")
    if raw is None:
        return None
    try:
        cap = int(raw)
    except ValueError:
        raise ValidationError(f"FUSEKIT_THREADS must be an integer, got {raw!r}")
    if cap < 1:
        raise ValidationError(f"FUSEKIT_THREADS must be >= 1, got {cap}")
    return cap


def _base_config(args: argparse.Namespace) -> dict:
    config = {k: v for k, v in vars(args).items() if k != "func"}
    for key, value in list(config.items()):
        if isinstance(value, Path):
            config[key] = str(value)
        elif isinstance(value, list) and value and isinstance(value[0], Path):
            config[key] = [str(v) for v in value]
    config["threads"] = _thread_cap()
    return config


def _emit(report: dict, args: argparse.Namespace, table: str | None = None) -> None:
    if table:
        print(table)
    text = reports.dump_json(report, getattr(args, "report", None))
    if getattr(args, "report", None):
        print(f"report written to {args.report}")
    else:
        sys.stdout.write(text)


def _require_file(path: Path) -> Path:
    if not Path(path).is_file():
        raise ValidationError(f"input file not found: {path}")
    return Path(path)


def _require_dir(path: Path) -> Path:
    if not Path(path).is_dir():
        raise ValidationError(f"input directory not found: {path}")
    return Path(path)


def _load_gt(args) -> tuple[list[np.ndarray], int, int]:
    gts, manifest = datasets.read_label_maps(_require_dir(args.gt))
    num_classes = args.classes or manifest["num_classes"]
    ignore_label = manifest.get("ignore_label", DEFAULT_IGNORE_LABEL)
    if args.ignore_label is not None:
        ignore_label = args.ignore_label
    return gts, num_classes, ignore_label


def _scores_report(scores) -> dict:
    return {
        "miou": scores.miou,
        "precision": scores.precision,
        "recall": scores.recall,
        "pixel_accuracy": scores.pixel_accuracy,
        "iou_per_class": scores.iou,
        "included": scores.included,
    }


def _scores_table(scores) -> str:
    rows = [
        (c, scores.iou[c], scores.precision_per_class[c], scores.recall_per_class[c])
        for c in range(len(scores.iou))
        if scores.included[c]
    ]
    per_class = reports.render_table(rows, ["class", "iou", "precision", "recall"])
    summary = reports.render_table(
        [(scores.miou, scores.precision, scores.recall, scores.pixel_accuracy)],
        ["miou", "precision", "recall", "pixel_acc"],
    )
    return per_class + "\n\n" + summary


def cmd_fuse(args) -> None:
    fuse_archive_files(
        _require_file(args.checkpoint_a),
        _require_file(args.checkpoint_b),
        args.alpha,
        args.output,
        extrapolate=args.extrapolate,
    )
    report = {
        "config": _base_config(args),
        "alpha": args.alpha,
        "beta": 1.0 - args.alpha,
        "output": str(args.output),
    }
    _emit(report, args)


def cmd_swa(args) -> None:
    ckpts = [read_archive(_require_file(p)) for p in args.checkpoints]
    fused = swa_average(ckpts)
    write_archive(fused, args.output)
    report = {
        "config": _base_config(args),
        "num_weights": len(ckpts),
        "coefficients": [1.0 / len(ckpts)] * len(ckpts),
        "output": str(args.output),
    }
    _emit(report, args)


def cmd_cossim(args) -> None:
    a = read_archive(_require_file(args.checkpoint_a))
    b = read_archive(_require_file(args.checkpoint_b))
    sim = cosine_similarity(a, b)
    low = sim.cosine < SIMILARITY_WARN_THRESHOLD
    report = {
        "config": _base_config(args),
        "cosine": sim.cosine,
        "dimension": sim.dimension,
        "skipped": sim.skipped,
        "low_similarity_warning": low,
    }
    table = reports.render_table([(sim.cosine, sim.dimension)], ["cosine", "dimension"])
    if low:
        table += (
            f"\nwarning: cosine similarity below {SIMILARITY_WARN_THRESHOLD}; "
            "fusion is unlikely to beat the single weights"
        )
    _emit(report, args, table)


def cmd_oracle(args) -> None:
    gts, num_classes, ignore_label = _load_gt(args)
    preds_per_model = []
    for pred_dir in args.pred:
        preds, _ = datasets.read_label_maps(_require_dir(pred_dir))
        preds_per_model.append(preds)
    scores = oracle_score(preds_per_model, gts, num_classes, ignore_label)
    report = {
        "config": _base_config(args),
        "num_models": len(preds_per_model),
        "oracle": _scores_report(scores),
    }
    _emit(report, args, _scores_table(scores))


def cmd_metrics(args) -> None:
    gts, num_classes, ignore_label = _load_gt(args)
    preds, _ = datasets.read_label_maps(_require_dir(args.pred))
    cm = confusion_matrix(preds, gts, num_classes, ignore_label)
    scores = compute_metrics(cm)
    report = {
        "config": _base_config(args),
        "valid_pixels": cm.valid_pixels,
        "metrics": _scores_report(scores),
    }
    _emit(report, args, _scores_table(scores))


def cmd_calibrate(args) -> None:
    gts, _, ignore_label = _load_gt(args)
    preds, _ = datasets.read_prediction_set(_require_dir(args.pred))
    if preds.confidence is None:
        raise ValidationError(f"prediction dump {args.pred} has no confidence maps")
    rep = calibration(preds, gts, args.bins, ignore_label, weighted_ece=args.weighted_ece)
    report = {
        "config": _base_config(args),
        "ece": rep.ece,
        "mce": rep.mce,
        "kl": rep.kl,
        "bins": [
            {"count": b.count, "accuracy": b.accuracy, "confidence": b.confidence}
            for b in rep.bins
        ],
    }
    rows = [
        (i, b.count, b.accuracy, b.confidence)
        for i, b in enumerate(rep.bins)
        if b.count
    ]
    table = reports.render_table(rows, ["bin", "count", "accuracy", "confidence"])
    table += "\n\n" + reports.render_table(
        [(rep.ece, rep.mce, rep.kl if rep.kl is not None else "undefined")],
        ["ece", "mce", "kl"],
    )
    _emit(report, args, table)


def cmd_ensemble(args) -> None:
    members = []
    manifest = None
    for pred_dir in args.pred:
        preds, man = datasets.read_prediction_set(_require_dir(pred_dir))
        if preds.probs is None:
            raise ValidationError(f"prediction dump {pred_dir} has no probability maps")
        members.append(preds)
        manifest = manifest or man
    averaged = deep_ensemble_average(members)
    datasets.write_prediction_set(
        args.output,
        averaged,
        manifest["image_ids"],
        manifest["num_classes"],
        manifest.get("ignore_label", DEFAULT_IGNORE_LABEL),
    )
    report = {
        "config": _base_config(args),
        "num_members": len(members),
        "num_images": len(averaged),
        "output": str(args.output),
    }
    _emit(report, args)


def _build_evaluator(args) -> Evaluator:
    if args.table and args.command:
        raise ValidationError("pass either --table or --command, not both")
    if args.table:
        return Evaluator.from_csv(_require_file(args.table))
    if args.command:
        return Evaluator.from_command(
            args.command, timeout=args.timeout, workdir=args.workdir, keep=args.keep
        )
    raise ValidationError("search needs a score source: --table CSV or --command CMD")


def cmd_search(args) -> None:
    evaluator = _build_evaluator(args)
    ckpts = [read_archive(_require_file(p)) for p in args.checkpoints]
    if len(ckpts) < 2:
        raise ValidationError("search needs at least 2 checkpoints")
    if len(ckpts) == 2:
        result = grid_search_alpha(
            ckpts[0], ckpts[1], evaluator, step=args.step, early_stop=args.early_stop
        )
    else:
        result = random_simplex_search(ckpts, evaluator, trials=args.trials, seed=args.seed)
    report = {"config": _base_config(args), "search": result.to_dict()}
    rows = [(list(c), s) for c, s in result.evaluations]
    table = reports.render_table(rows, ["coefficients", "score"])
    table += f"\n\nbest {list(result.best)} score {result.best_score:.6f}"
    _emit(report, args, table)


def cmd_schedule(args) -> None:
    schedule = CosineCycleSchedule(
        start_lr=args.start_lr,
        iterations_per_cycle=args.iterations_per_cycle,
        cycles=args.cycles,
    )
    epochs = None
    if args.checkpoint_epochs:
        epochs = [int(e) for e in args.checkpoint_epochs.split(",") if e != ""]
    rows = emit_schedule(schedule, epochs)
    write_schedule_csv(rows, args.output)
    marked = [r.iteration for r in rows if r.checkpoint]
    report = {
        "config": _base_config(args),
        "total_iterations": schedule.total_iterations,
        "checkpoint_iterations": marked,
        "num_checkpoints": len(marked),
        "output": str(args.output),
    }
    _emit(report, args)


def cmd_gen_fixtures(args) -> None:
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "checkpoints":
        a, b = fixtures.checkpoint_pair(args.cosine, seed=args.seed)
        write_archive(a, out / "a.fta")
        write_archive(b, out / "b.fta")
        produced = ["a.fta", "b.fta"]
    elif args.kind == "predictions":
        fracs = [float(f) for f in args.fractions.split(",")]
        gt, preds = fixtures.prediction_sets(
            fracs,
            overlap=args.overlap,
            height=args.height,
            width=args.width,
            num_classes=args.classes or 5,
            seed=args.seed,
        )
        num_classes = args.classes or 5
        from fusekit.evaluation import PredictionSet

        datasets.write_prediction_set(out / "gt", PredictionSet(labels=[gt]), ["img0"], num_classes)
        produced = ["gt"]
        for k, pred in enumerate(preds):
            datasets.write_prediction_set(
                out / f"model{k}", PredictionSet(labels=[pred]), ["img0"], num_classes
            )
            produced.append(f"model{k}")
    elif args.kind == "calibration":
        specs = []
        for part in args.bins_spec.split(","):
            bin_index, count, accuracy = part.split(":")
            specs.append((int(bin_index), int(count), float(accuracy)))
        preds, gt = fixtures.calibration_set(specs, num_bins=args.bins, seed=args.seed)
        from fusekit.evaluation import PredictionSet

        datasets.write_prediction_set(out / "pred", preds, ["img0"], 2)
        datasets.write_prediction_set(out / "gt", PredictionSet(labels=[gt]), ["img0"], 2)
        produced = ["pred", "gt"]
    else:
        raise ValidationError(f"unknown fixture kind {args.kind!r}")
    report = {"config": _base_config(args), "produced": produced, "output": str(out)}
    _emit(report, args)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fusekit",
        description="Checkpoint weight fusion, diagnostics and segmentation evaluation",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add_report(p):
        p.add_argument("--report", type=Path, default=None, help="write JSON report here")

    p = sub.add_parser("fuse", help="fuse two checkpoints with a fixed alpha")
    p.add_argument("checkpoint_a", type=Path)
    p.add_argument("checkpoint_b", type=Path)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("-o", "--output", type=Path, required=True)
    p.add_argument("--extrapolate", action="store_true", help="allow alpha outside [0, 1]")
    add_report(p)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("swa", help="equally weighted average of checkpoints")
    p.add_argument("checkpoints", type=Path, nargs="+")
    p.add_argument("-o", "--output", type=Path, required=True)
    add_report(p)
    p.set_defaults(func=cmd_swa)

    p = sub.add_parser("cossim", help="weight-space cosine similarity")
    p.add_argument("checkpoint_a", type=Path)
    p.add_argument("checkpoint_b", type=Path)
    add_report(p)
    p.set_defaults(func=cmd_cossim)

    def add_eval_dataset(p, multi_pred=False):
        if multi_pred:
            p.add_argument("--pred", type=Path, action="append", required=True,
                           help="prediction dump directory (repeatable)")
        else:
            p.add_argument("--pred", type=Path, required=True)
        p.add_argument("--gt", type=Path, required=True)
        p.add_argument("--classes", type=int, default=None)
        p.add_argument("--ignore-label", type=int, default=None)

    p = sub.add_parser("oracle", help="oracle testing across prediction dumps")
    add_eval_dataset(p, multi_pred=True)
    add_report(p)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("metrics", help="mIoU/precision/recall of a prediction dump")
    add_eval_dataset(p)
    add_report(p)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("calibrate", help="ECE/MCE/KL calibration metrics")
    add_eval_dataset(p)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--weighted-ece", action="store_true",
                   help="weight bins by population instead of 1/B")
    add_report(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("ensemble", help="deep-ensemble softmax averaging")
    p.add_argument("--pred", type=Path, action="append", required=True)
    p.add_argument("-o", "--output", type=Path, required=True)
    add_report(p)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("search", help="fusion-coefficient search")
    p.add_argument("checkpoints", type=Path, nargs="+")
    p.add_argument("--table", type=Path, default=None, help="CSV score table")
    p.add_argument("--command", type=str, default=None,
                   help="evaluator command with {checkpoint} placeholder")
    p.add_argument("--timeout", type=float, default=None)
    p.add_argument("--workdir", type=Path, default=None)
    p.add_argument("--step", type=float, default=0.05)
    p.add_argument("--early-stop", action="store_true")
    p.add_argument("--keep", action="store_true", help="keep fused checkpoints on disk")
    p.add_argument("--trials", type=int, default=50, help="simplex trials for 3+ weights")
    p.add_argument("--seed", type=int, default=0)
    add_report(p)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("schedule", help="emit a cosine-annealing schedule table")
    p.add_argument("--start-lr", type=float, default=0.005)
    p.add_argument("--iterations-per-cycle", type=int, required=True)
    p.add_argument("--cycles", type=int, default=1)
    p.add_argument("--checkpoint-epochs", type=str, default=None,
                   help="comma-separated cycle indices to mark (0 = starting weight)")
    p.add_argument("-o", "--output", type=Path, required=True)
    add_report(p)
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("gen-fixtures", help="generate seeded verification fixtures")
    p.add_argument("kind", choices=["checkpoints", "predictions", "calibration"])
    p.add_argument("-o", "--output", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cosine", type=float, default=0.95, help="target cosine (checkpoints)")
    p.add_argument("--fractions", type=str, default="0.6,0.6",
                   help="per-model correct fractions (predictions)")
    p.add_argument("--overlap", type=float, default=None,
                   help="exact overlap of correct sets, two models only")
    p.add_argument("--height", type=int, default=24)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--bins-spec", type=str, default="9:100:0.9",
                   help="bin:count:accuracy triples, comma separated (calibration)")
    add_report(p)
    p.set_defaults(func=cmd_gen_fixtures)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code not in (0, None) else 0
    try:
        args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ArchiveError, CompatibilityError, FusionError, EvaluatorError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
