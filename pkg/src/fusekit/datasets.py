"""Prediction-dump dataset IO.

A dataset is a directory of per-image .fta archives plus a manifest
JSON. Each archive carries "labels" (u16 HxW) and optionally
"confidence" (f32 HxW) and "probs" (f32 CxHxW). The manifest lists the
image ids, the class count, and the ignore label.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from fusekit.evaluation import DEFAULT_IGNORE_LABEL, PredictionSet
from fusekit.tensor_store import Checkpoint, read_archive, write_archive

MANIFEST_NAME = "manifest.json"


def write_manifest(
    directory: str | Path,
    image_ids: list[str],
    num_classes: int,
    ignore_label: int = DEFAULT_IGNORE_LABEL,
) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "image_ids": list(image_ids),
        "num_classes": int(num_classes),
        "ignore_label": int(ignore_label),
    }
    with open(directory / MANIFEST_NAME, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def read_manifest(directory: str | Path) -> dict:
    path = Path(directory) / MANIFEST_NAME
    if not path.exists():
        raise FileNotFoundError(f"no {MANIFEST_NAME} in {directory}")
    with open(path) as f:
        manifest = json.load(f)
    for key in ("image_ids", "num_classes"):
        if key not in manifest:
            raise ValueError(f"manifest {path} is missing {key!r}")
    manifest.setdefault("ignore_label", DEFAULT_IGNORE_LABEL)
    return manifest


def write_prediction_set(
    directory: str | Path,
    predictions: PredictionSet,
    image_ids: list[str],
    num_classes: int,
    ignore_label: int = DEFAULT_IGNORE_LABEL,
) -> None:
    """Write one .fta per image plus the manifest."""
    if len(image_ids) != len(predictions):
        raise ValueError(f"{len(image_ids)} ids for {len(predictions)} images")
    directory = Path(directory)
    write_manifest(directory, image_ids, num_classes, ignore_label)
    for i, image_id in enumerate(image_ids):
        tensors = {"labels": predictions.labels[i]}
        if predictions.confidence is not None:
            tensors["confidence"] = predictions.confidence[i]
        if predictions.probs is not None:
            tensors["probs"] = predictions.probs[i]
        write_archive(Checkpoint(tensors), directory / f"{image_id}.fta")


def read_prediction_set(directory: str | Path) -> tuple[PredictionSet, dict]:
    """Read a prediction dump directory back into a PredictionSet."""
    directory = Path(directory)
    manifest = read_manifest(directory)
    labels, confidence, probs = [], [], []
    have_conf = have_probs = True
    for image_id in manifest["image_ids"]:
        ckpt = read_archive(directory / f"{image_id}.fta")
        if "labels" not in ckpt:
            raise ValueError(f"archive for image {image_id!r} has no 'labels' tensor")
        labels.append(ckpt["labels"])
        if "confidence" in ckpt:
            confidence.append(ckpt["confidence"])
        else:
            have_conf = False
        if "probs" in ckpt:
            probs.append(ckpt["probs"])
        else:
            have_probs = False
    return (
        PredictionSet(
            labels=labels,
            confidence=confidence if have_conf and confidence else None,
            probs=probs if have_probs and probs else None,
        ),
        manifest,
    )


def read_label_maps(directory: str | Path) -> tuple[list[np.ndarray], dict]:
    """Read just the label maps (e.g. a ground-truth dataset)."""
    predictions, manifest = read_prediction_set(directory)
    return predictions.labels, manifest
