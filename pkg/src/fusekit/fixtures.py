"""Seeded fixture generators for desk-scale verification.

Three kinds: checkpoint pairs with a planted cosine similarity,
prediction sets with controlled per-model correct fractions and overlap,
and calibration sets with specified per-bin accuracy.
"""

from __future__ import annotations

import numpy as np

from fusekit.evaluation import DEFAULT_IGNORE_LABEL, PredictionSet
from fusekit.tensor_store import Checkpoint

DEFAULT_LAYOUT = {
    "backbone.conv1.weight": (16, 3, 3, 3),
    "backbone.conv2.weight": (32, 16, 3, 3),
    "head.weight": (8, 32),
    "head.bias": (8,),
}


def checkpoint_pair(
    target_cosine: float,
    layout: dict[str, tuple[int, ...]] | None = None,
    seed: int = 0,
    dtype: str = "f64",
) -> tuple[Checkpoint, Checkpoint]:
    """Emit two checkpoints whose weight-space cosine equals target_cosine.

    The second weight vector is ||v1|| * (c*u1 + sqrt(1-c^2)*w) for a
    random unit w orthogonal to u1 = v1/||v1||, split back into the
    tensor layout.
    """
    if not -1.0 <= target_cosine <= 1.0:
        raise ValueError(f"target cosine must be in [-1, 1], got {target_cosine}")
    layout = layout or DEFAULT_LAYOUT
    rng = np.random.default_rng(seed)
    sizes = {name: int(np.prod(shape)) for name, shape in layout.items()}
    dim = sum(sizes.values())
    if dim < 2:
        raise ValueError("layout must have at least 2 parameters")

    v1 = rng.standard_normal(dim)
    norm1 = np.linalg.norm(v1)
    u1 = v1 / norm1
    w = rng.standard_normal(dim)
    w -= (w @ u1) * u1
    w /= np.linalg.norm(w)
    c = float(target_cosine)
    v2 = norm1 * (c * u1 + np.sqrt(max(0.0, 1.0 - c * c)) * w)

    def split(vec: np.ndarray) -> Checkpoint:
        tensors = {}
        offset = 0
        np_dtype = np.float32 if dtype == "f32" else np.float64
        for name in sorted(layout):
            size = sizes[name]
            tensors[name] = vec[offset : offset + size].reshape(layout[name]).astype(np_dtype)
            offset += size
        return Checkpoint(tensors)

    return split(v1), split(v2)


def prediction_sets(
    correct_fractions: list[float],
    overlap: float | None = None,
    height: int = 24,
    width: int = 32,
    num_classes: int = 5,
    seed: int = 0,
    ignore_label: int = DEFAULT_IGNORE_LABEL,
    ignore_fraction: float = 0.0,
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Generate one ground-truth map and K prediction maps.

    Model k is correct on exactly round(correct_fractions[k] * n) valid
    pixels. For two models an exact pairwise overlap of the correct sets
    can be requested; for more models the correct sets are sampled
    independently (overlap must then be None).
    """
    k = len(correct_fractions)
    if k == 0:
        raise ValueError("need at least one correct fraction")
    if overlap is not None and k != 2:
        raise ValueError("exact overlap control is only supported for two models")
    rng = np.random.default_rng(seed)
    gt = rng.integers(0, num_classes, size=(height, width), dtype=np.uint16)
    n_total = height * width
    n_ignore = int(round(ignore_fraction * n_total))
    flat_idx = rng.permutation(n_total)
    gt.ravel()[flat_idx[:n_ignore]] = ignore_label
    valid_idx = flat_idx[n_ignore:]
    n = valid_idx.size

    def wrong_map() -> np.ndarray:
        # Wrong everywhere: shift each gt label by one class.
        wrong = (gt.astype(np.int64) + 1) % num_classes
        return wrong.astype(np.uint16)

    counts = [int(round(f * n)) for f in correct_fractions]
    for f, cnt in zip(correct_fractions, counts):
        if not 0.0 <= f <= 1.0:
            raise ValueError(f"correct fraction {f} outside [0, 1]")

    correct_sets: list[np.ndarray]
    if overlap is None:
        correct_sets = [rng.permutation(valid_idx)[:cnt] for cnt in counts]
    else:
        n_overlap = int(round(overlap * n))
        n_a, n_b = counts
        if n_overlap > min(n_a, n_b) or n_a + n_b - n_overlap > n:
            raise ValueError(
                f"infeasible overlap {overlap} for fractions {correct_fractions}"
            )
        perm = rng.permutation(valid_idx)
        shared = perm[:n_overlap]
        only_a = perm[n_overlap : n_overlap + (n_a - n_overlap)]
        only_b = perm[n_overlap + (n_a - n_overlap) : n_a + n_b - n_overlap]
        correct_sets = [
            np.concatenate([shared, only_a]),
            np.concatenate([shared, only_b]),
        ]

    preds = []
    for idx in correct_sets:
        pred = wrong_map()
        pred.ravel()[idx] = gt.ravel()[idx]
        preds.append(pred)
    return gt, preds


def calibration_set(
    bin_specs: list[tuple[int, int, float]],
    num_bins: int = 10,
    num_classes: int = 2,
    seed: int = 0,
) -> tuple[PredictionSet, np.ndarray]:
    """Build a single-image prediction set with exact per-bin accuracy.

    bin_specs lists (bin_index, pixel_count, accuracy); each listed bin
    receives pixel_count pixels at the bin's center confidence, of which
    round(accuracy * pixel_count) are correct.
    """
    confs, labels, gts = [], [], []
    rng = np.random.default_rng(seed)
    for bin_index, count, accuracy in bin_specs:
        if not 0 <= bin_index < num_bins:
            raise ValueError(f"bin index {bin_index} outside [0, {num_bins})")
        if not 0.0 <= accuracy <= 1.0:
            raise ValueError(f"accuracy {accuracy} outside [0, 1]")
        center = (bin_index + 0.5) / num_bins
        n_correct = int(round(accuracy * count))
        for j in range(count):
            gt_label = int(rng.integers(0, num_classes))
            if j < n_correct:
                pred_label = gt_label
            else:
                pred_label = (gt_label + 1) % num_classes
            confs.append(center)
            labels.append(pred_label)
            gts.append(gt_label)
    n = len(confs)
    if n == 0:
        raise ValueError("no pixels specified")
    shape = (1, n)
    preds = PredictionSet(
        labels=[np.array(labels, dtype=np.uint16).reshape(shape)],
        confidence=[np.array(confs, dtype=np.float32).reshape(shape)],
    )
    gt = np.array(gts, dtype=np.uint16).reshape(shape)
    return preds, gt
