"""Per-pixel MLP and its plain-numpy SGD trainer."""

from __future__ import annotations

import math

import numpy as np

from refnet.task import TaskConfig, generate_split

HIDDEN = 16
TENSOR_NAMES = ("fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias")


class DivergenceError(Exception):
    """Training loss became non-finite."""


def init_params(num_classes: int, seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0FFEE]))
    return {
        "fc1.weight": (rng.standard_normal((HIDDEN, 2)) / math.sqrt(2)).astype(np.float32),
        "fc1.bias": np.zeros(HIDDEN, dtype=np.float32),
        "fc2.weight": (rng.standard_normal((num_classes, HIDDEN)) / math.sqrt(HIDDEN)).astype(np.float32),
        "fc2.bias": np.zeros(num_classes, dtype=np.float32),
    }


def check_layout(params: dict[str, np.ndarray], num_classes: int) -> None:
    expected = {name: arr.shape for name, arr in init_params(num_classes, 0).items()}
    got = {name: arr.shape for name, arr in params.items()}
    if got != expected:
        raise ValueError(f"checkpoint layout {got} does not match TinyNet {expected}")


def forward(params: dict[str, np.ndarray], x: np.ndarray) -> np.ndarray:
    """Softmax probabilities for a (N, 2) batch of pixels, as f64 (N, C)."""
    h = x.astype(np.float64) @ params["fc1.weight"].T.astype(np.float64)
    h += params["fc1.bias"].astype(np.float64)
    h = np.maximum(h, 0.0)
    logits = h @ params["fc2.weight"].T.astype(np.float64)
    logits += params["fc2.bias"].astype(np.float64)
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def _grads(params, x, y):
    x64 = x.astype(np.float64)
    w1 = params["fc1.weight"].astype(np.float64)
    w2 = params["fc2.weight"].astype(np.float64)
    pre = x64 @ w1.T + params["fc1.bias"].astype(np.float64)
    h = np.maximum(pre, 0.0)
    logits = h @ w2.T + params["fc2.bias"].astype(np.float64)
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    probs = e / e.sum(axis=1, keepdims=True)
    n = x.shape[0]
    loss = -np.log(np.maximum(probs[np.arange(n), y], 1e-300)).mean()

    d_logits = probs.copy()
    d_logits[np.arange(n), y] -= 1.0
    d_logits /= n
    d_w2 = d_logits.T @ h
    d_b2 = d_logits.sum(axis=0)
    d_h = d_logits @ w2
    d_pre = d_h * (pre > 0)
    d_w1 = d_pre.T @ x64
    d_b1 = d_pre.sum(axis=0)
    return loss, {
        "fc1.weight": d_w1,
        "fc1.bias": d_b1,
        "fc2.weight": d_w2,
        "fc2.bias": d_b2,
    }


def cosine_lr(start_lr: float, t: int, iters_per_cycle: int) -> float:
    phase = t % iters_per_cycle
    return 0.5 * start_lr * (1.0 + math.cos(math.pi * phase / iters_per_cycle))


def train(
    config: TaskConfig,
    seed: int,
    epochs: int = 30,
    lr: float = 0.5,
    batch_size: int = 1024,
    cycles: int = 1,
    snapshot_hook=None,
) -> dict[str, np.ndarray]:
    """SGD with cyclic cosine annealing; deterministic per (config, seed).

    snapshot_hook(cycle_index, params) is called on the initial weights
    (cycle 0) and after each completed cycle, mirroring a checkpoint
    taken at every cycle boundary.
    """
    features, labels = generate_split(config, "train")
    x = np.concatenate([f.reshape(-1, 2) for f in features])
    y = np.concatenate([l.reshape(-1) for l in labels]).astype(np.int64)

    params = init_params(config.num_classes, seed)
    if snapshot_hook is not None:
        snapshot_hook(0, {k: v.copy() for k, v in params.items()})

    order_rng = np.random.default_rng(np.random.SeedSequence([seed, 0xBA7C4]))
    batches_per_epoch = math.ceil(x.shape[0] / batch_size)
    iters_per_cycle = max(1, (epochs * batches_per_epoch) // max(cycles, 1))
    t = 0
    for epoch in range(epochs):
        perm = order_rng.permutation(x.shape[0])
        for b in range(batches_per_epoch):
            idx = perm[b * batch_size : (b + 1) * batch_size]
            loss, grads = _grads(params, x[idx], y[idx])
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}")
            step = cosine_lr(lr, t, iters_per_cycle)
            for name in TENSOR_NAMES:
                params[name] = (
                    params[name].astype(np.float64) - step * grads[name]
                ).astype(np.float32)
            t += 1
            if snapshot_hook is not None and t % iters_per_cycle == 0:
                cycle = t // iters_per_cycle
                if cycle <= cycles:
                    snapshot_hook(cycle, {k: v.copy() for k, v in params.items()})
    return params


def predict_split(params: dict[str, np.ndarray], config: TaskConfig, split: str):
    """Per-image (labels u16, confidence f32, probs f32 CxHxW) triples."""
    check_layout(params, config.num_classes)
    outputs = []
    features, _ = generate_split(config, split)
    for f in features:
        h, w, _ = f.shape
        probs = forward(params, f.reshape(-1, 2)).reshape(h, w, config.num_classes)
        probs = np.moveaxis(probs, -1, 0).astype(np.float32)
        probs /= probs.sum(axis=0, keepdims=True)  # renormalize after f32 cast
        labels = probs.argmax(axis=0).astype(np.uint16)
        confidence = probs.max(axis=0)
        outputs.append((labels, confidence, probs))
    return outputs


def pixel_accuracy(params: dict[str, np.ndarray], config: TaskConfig, split: str) -> float:
    _, gts = generate_split(config, split)
    correct = total = 0
    for (labels, _, _), gt in zip(predict_split(params, config, split), gts):
        correct += int((labels == gt).sum())
        total += gt.size
    return correct / total
