"""Minimal dense neural-network engine on numpy."""

from petra.nn.layers import (
    BatchNorm,
    Conv2D,
    Flatten,
    Layer,
    Linear,
    NumericError,
    QuantRecord,
    ReLU,
    ShapeError,
)
from petra.nn.network import Network, Task
from petra.nn.backprop import LossResult, loss_and_grads, loss_value
from petra.nn.optim import Optimizer
from petra.nn.train import TrainResult, train, validation_score
from petra.nn import checkpoint, models

__all__ = [
    "BatchNorm", "Conv2D", "Flatten", "Layer", "Linear", "NumericError", "QuantRecord", "ReLU",
    "ShapeError", "Network", "Task", "LossResult", "loss_and_grads", "loss_value", "Optimizer",
    "TrainResult", "train", "validation_score", "checkpoint", "models",
]
