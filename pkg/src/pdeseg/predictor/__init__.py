"""Trainable encoder-decoder predictor."""

from .network import (
    ArchConfig,
    ParamSet,
    backward,
    batch_loss_and_grad,
    forward,
    forward_batch,
    init_params,
)
from .training import TrainConfig, TrainLog, train

__all__ = [
    "ArchConfig",
    "ParamSet",
    "TrainConfig",
    "TrainLog",
    "backward",
    "batch_loss_and_grad",
    "forward",
    "forward_batch",
    "init_params",
    "train",
]
