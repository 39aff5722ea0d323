"""Tiny reference segmentation trainer and evaluator."""

from refnet.model import (
    DivergenceError,
    forward,
    init_params,
    pixel_accuracy,
    predict_split,
    train,
)
from refnet.task import TaskConfig, generate_image, generate_split

__version__ = "0.1.0"

__all__ = [
    "DivergenceError",
    "TaskConfig",
    "forward",
    "generate_image",
    "generate_split",
    "init_params",
    "pixel_accuracy",
    "predict_split",
    "train",
]
