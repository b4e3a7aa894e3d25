from gyrocal.nn.checkpoint import load_checkpoint, save_checkpoint
from gyrocal.nn.layers import conv1d_forward, leaky_relu, max_pool1d
from gyrocal.nn.network import (
    BiasRegressor,
    NetworkConfig,
    backward,
    forward,
    init_params,
    mse_loss,
    zero_params,
)
from gyrocal.nn.optim import AdamState, adam_step
from gyrocal.nn.train import TrainConfig, TrainReport, train

__all__ = [
    "AdamState",
    "BiasRegressor",
    "NetworkConfig",
    "TrainConfig",
    "TrainReport",
    "adam_step",
    "backward",
    "conv1d_forward",
    "forward",
    "init_params",
    "leaky_relu",
    "load_checkpoint",
    "max_pool1d",
    "mse_loss",
    "save_checkpoint",
    "train",
    "zero_params",
]
