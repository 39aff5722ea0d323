"""Synthetic segmentation task: smooth random fields at desk scale.

Each image is built from a seeded low-resolution gaussian grid that is
bilinearly upsampled. The class map quantizes the latent field into C
bands; the two feature channels are noisy views of the same field, so a
small per-pixel network can recover the bands but not perfectly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SPLITS = ("train", "val", "test")
SPLIT_SIZES = {"train": 8, "val": 4, "test": 4}
_SPLIT_IDS = {name: i for i, name in enumerate(SPLITS)}


@dataclass(frozen=True)
class TaskConfig:
    seed: int = 0
    height: int = 24
    width: int = 32
    num_classes: int = 4
    noise: float = 0.10
    coarse: int = 5  # resolution of the latent grid


def _bilinear(coarse: np.ndarray, height: int, width: int) -> np.ndarray:
    ch, cw = coarse.shape
    y = np.linspace(0.0, ch - 1.0, height)
    x = np.linspace(0.0, cw - 1.0, width)
    y0 = np.clip(np.floor(y).astype(int), 0, ch - 2)
    x0 = np.clip(np.floor(x).astype(int), 0, cw - 2)
    fy = (y - y0)[:, None]
    fx = (x - x0)[None, :]
    tl = coarse[np.ix_(y0, x0)]
    tr = coarse[np.ix_(y0, x0 + 1)]
    bl = coarse[np.ix_(y0 + 1, x0)]
    br = coarse[np.ix_(y0 + 1, x0 + 1)]
    top = tl + (tr - tl) * fx
    bottom = bl + (br - bl) * fx
    return top + (bottom - top) * fy


def generate_image(config: TaskConfig, split: str, index: int) -> tuple[np.ndarray, np.ndarray]:
    """One (features, labels) pair; features HxWx2 f32, labels HxW u16."""
    if split not in _SPLIT_IDS:
        raise ValueError(f"unknown split {split!r}")
    seq = np.random.SeedSequence([config.seed, _SPLIT_IDS[split], index])
    rng = np.random.default_rng(seq)
    field = _bilinear(rng.standard_normal((config.coarse, config.coarse)),
                      config.height, config.width)
    lo, hi = field.min(), field.max()
    z = (field - lo) / (hi - lo) if hi > lo else np.full_like(field, 0.5)
    labels = np.minimum((z * config.num_classes).astype(np.int64),
                        config.num_classes - 1).astype(np.uint16)
    f1 = z + config.noise * rng.standard_normal(z.shape)
    f2 = (1.0 - z) + config.noise * rng.standard_normal(z.shape)
    features = np.stack([f1, f2], axis=-1).astype(np.float32)
    return features, labels


def generate_split(config: TaskConfig, split: str) -> tuple[list[np.ndarray], list[np.ndarray]]:
    features, labels = [], []
    for i in range(SPLIT_SIZES[split]):
        f, l = generate_image(config, split, i)
        features.append(f)
        labels.append(l)
    return features, labels
