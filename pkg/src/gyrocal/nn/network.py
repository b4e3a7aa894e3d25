"""Conv -> LeakyReLU -> max-pool -> FC -> LeakyReLU -> FC bias regressor.

The pooled feature map (F, L2) is flattened filter-major: flat index
``f * L2 + position``. That order is part of the checkpoint contract.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from gyrocal.exceptions import InvalidArgumentError, ShapeError
from gyrocal.nn.layers import (
    LEAKY_SLOPE,
    _im2col,
    conv_output_length,
    leaky_relu,
    leaky_relu_grad,
)

PARAM_NAMES = ("conv_w", "conv_b", "w1", "b1", "w2", "b2")


@dataclass(frozen=True)
class NetworkConfig:
    in_channels: int
    window_len: int
    filters: int = 16
    kernel_size: int = 7
    stride: int = 1
    conv_bias: bool = True
    slope: float = LEAKY_SLOPE
    pool_size: int = 4
    hidden: int = 64
    out_dim: int | None = None

    def __post_init__(self):
        if self.out_dim is None:
            object.__setattr__(self, "out_dim", self.in_channels)
        for name in ("in_channels", "window_len", "filters", "kernel_size", "stride", "pool_size", "hidden", "out_dim"):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.out_dim != self.in_channels:
            raise InvalidArgumentError("out_dim must equal in_channels (one bias per input channel)")
        if self.window_len < self.kernel_size:
            raise InvalidArgumentError(f"window_len {self.window_len} shorter than kernel {self.kernel_size}")
        if self.pooled_len < 1:
            raise InvalidArgumentError(f"conv output of length {self.conv_len} too short for pool size {self.pool_size}")

    @property
    def conv_len(self) -> int:
        return conv_output_length(self.window_len, self.kernel_size, self.stride)

    @property
    def pooled_len(self) -> int:
        return self.conv_len // self.pool_size

    @property
    def flat_dim(self) -> int:
        return self.filters * self.pooled_len

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        return {
            "conv_w": (self.filters, self.in_channels, self.kernel_size),
            "conv_b": (self.filters,),
            "w1": (self.flat_dim, self.hidden),
            "b1": (self.hidden,),
            "w2": (self.hidden, self.out_dim),
            "b2": (self.out_dim,),
        }

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> NetworkConfig:
        return cls(**d)


Params = dict[str, np.ndarray]


def check_params(params: Params, config: NetworkConfig) -> None:
    shapes = config.param_shapes()
    if set(params) != set(shapes):
        raise ShapeError(f"expected parameters {sorted(shapes)}, got {sorted(params)}")
    for name, shape in shapes.items():
        if params[name].shape != shape:
            raise ShapeError(f"{name} has shape {params[name].shape}, config implies {shape}")
        if not np.all(np.isfinite(params[name])):
            raise InvalidArgumentError(f"{name} contains non-finite values")


def init_params(config: NetworkConfig, seed: int) -> Params:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))
    fan_in = {
        "conv_w": config.in_channels * config.kernel_size,
        "conv_b": config.in_channels * config.kernel_size,
        "w1": config.flat_dim,
        "b1": config.flat_dim,
        "w2": config.hidden,
        "b2": config.hidden,
    }
    params = {}
    for name, shape in config.param_shapes().items():
        bound = 1.0 / np.sqrt(fan_in[name])
        params[name] = rng.uniform(-bound, bound, size=shape)
    if not config.conv_bias:
        params["conv_b"] = np.zeros(config.filters)
    return params


def zero_params(config: NetworkConfig) -> Params:
    return {name: np.zeros(shape) for name, shape in config.param_shapes().items()}


def _check_input(x, config: NetworkConfig) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != (config.in_channels, config.window_len):
        raise ShapeError(
            f"expected window ({config.in_channels}, {config.window_len}) or a batch of them, got {x.shape}"
        )
    return x, single


def _forward(params: Params, config: NetworkConfig, x: np.ndarray) -> tuple[np.ndarray, dict]:
    # feature maps stay position-major (B, L, F) here so every op is contiguous
    b = x.shape[0]
    f, l2, p = config.filters, config.pooled_len, config.pool_size
    cols = _im2col(x, config.kernel_size, config.stride)
    z = cols @ params["conv_w"].reshape(f, -1).T + params["conv_b"]
    a = leaky_relu(z, config.slope)
    blocks = a[:, : l2 * p].reshape(b, l2, p, f)
    pooled = blocks[:, :, 0].copy()
    idx = np.zeros(pooled.shape, dtype=np.intp)
    for j in range(1, p):
        better = blocks[:, :, j] > pooled  # strict: first maximum wins ties
        np.copyto(pooled, blocks[:, :, j], where=better)
        idx[better] = j
    flat = pooled.transpose(0, 2, 1).reshape(b, config.flat_dim)
    h1 = flat @ params["w1"] + params["b1"]
    a1 = leaky_relu(h1, config.slope)
    pred = a1 @ params["w2"] + params["b2"]
    return pred, {"cols": cols, "z": z, "idx": idx, "flat": flat, "h1": h1, "a1": a1}


def forward(params: Params, config: NetworkConfig, window) -> np.ndarray:
    """Predicted bias (out_dim,) for one window (C, S), or (B, out_dim) for a batch."""
    x, single = _check_input(window, config)
    pred, _ = _forward(params, config, x)
    return pred[0] if single else pred


def mse_loss(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    if pred.size == 0:
        raise ShapeError("empty prediction")
    return float(np.mean((pred - target) ** 2))


def backward(params: Params, config: NetworkConfig, x, y) -> tuple[float, Params]:
    """MSE loss over the batch and its exact gradient for every parameter."""
    x, single = _check_input(x, config)
    y = np.asarray(y, dtype=np.float64)
    if single:
        y = y[None]
    if y.shape != (x.shape[0], config.out_dim):
        raise ShapeError(f"targets must have shape ({x.shape[0]}, {config.out_dim}), got {y.shape}")
    pred, cache = _forward(params, config, x)
    loss = mse_loss(pred, y)

    d_pred = 2.0 * (pred - y) / pred.size
    grads = {
        "w2": cache["a1"].T @ d_pred,
        "b2": d_pred.sum(axis=0),
    }
    d_h1 = (d_pred @ params["w2"].T) * leaky_relu_grad(cache["h1"], config.slope)
    grads["w1"] = cache["flat"].T @ d_h1
    grads["b1"] = d_h1.sum(axis=0)
    b = x.shape[0]
    f, l2, p = config.filters, config.pooled_len, config.pool_size
    d_pooled = (d_h1 @ params["w1"].T).reshape(b, f, l2).transpose(0, 2, 1)
    d_blocks = np.zeros((b, l2, p, f))
    idx = cache["idx"]
    for j in range(p):
        d_blocks[:, :, j] = np.where(idx == j, d_pooled, 0.0)
    d_a = np.zeros((b, config.conv_len, f))
    d_a[:, : l2 * p] = d_blocks.reshape(b, l2 * p, f)
    d_z = (d_a * leaky_relu_grad(cache["z"], config.slope)).reshape(-1, f)
    grads["conv_w"] = (d_z.T @ cache["cols"].reshape(d_z.shape[0], -1)).reshape(params["conv_w"].shape)
    grads["conv_b"] = d_z.sum(axis=0)
    if not config.conv_bias:
        grads["conv_b"] = np.zeros_like(grads["conv_b"])
    return loss, grads


class BiasRegressor:
    """A trained network bound to the window it was trained for."""

    def __init__(self, config: NetworkConfig, params: Params, window_s: float | None = None, sample_rate: float | None = None):
        check_params(params, config)
        self.config = config
        self.params = params
        self.window_s = window_s
        self.sample_rate = sample_rate

    @property
    def window_len(self) -> int:
        return self.config.window_len

    @property
    def in_channels(self) -> int:
        return self.config.in_channels

    def predict(self, windows) -> np.ndarray:
        return forward(self.params, self.config, windows)
