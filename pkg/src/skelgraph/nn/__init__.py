"""Numpy graph attention network: forward, exact backward, Adam, training loop."""

from .model import ModelConfig, backward, bce_loss, forward, grad_check, init_params
from .optim import AdamState, adam_step
from .training import (
    TrainResult,
    aggregate_volume,
    evaluate,
    load_checkpoint,
    predict,
    save_checkpoint,
    train,
)

__all__ = [
    "AdamState",
    "ModelConfig",
    "TrainResult",
    "adam_step",
    "aggregate_volume",
    "backward",
    "bce_loss",
    "evaluate",
    "forward",
    "grad_check",
    "init_params",
    "load_checkpoint",
    "predict",
    "save_checkpoint",
    "train",
]
