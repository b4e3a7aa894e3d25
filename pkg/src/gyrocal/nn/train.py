from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from gyrocal.error_model import derive_seed
from gyrocal.exceptions import InvalidArgumentError, TrainingDivergedError
from gyrocal.nn.network import NetworkConfig, Params, backward, check_params, init_params
from gyrocal.nn.optim import AdamState, adam_step

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 1e-4
    lr_decay: float = 0.1
    decay_every: int = 200
    epochs: int = 1200
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1 or self.decay_every < 1:
            raise InvalidArgumentError("batch_size, epochs and decay_every must be >= 1")
        if self.learning_rate < 0:
            raise InvalidArgumentError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0.0 < self.lr_decay <= 1.0:
            raise InvalidArgumentError(f"lr_decay must be in (0, 1], got {self.lr_decay}")

    def lr_at(self, epoch: int) -> float:
        """Step-decayed rate for a 0-based epoch index."""
        return self.learning_rate * self.lr_decay ** (epoch // self.decay_every)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        return cls(**d)


@dataclass
class TrainReport:
    losses: list[float]
    lrs: list[float]
    params: Params
    seed: int
    wall_time_s: float = 0.0
    steps: int = 0
    extra: dict = field(default_factory=dict)

    def log_csv(self) -> str:
        lines = ["epoch,train_loss,lr"]
        lines += [f"{i},{loss!r},{lr!r}" for i, (loss, lr) in enumerate(zip(self.losses, self.lrs))]
        return "\n".join(lines) + "\n"


def train(
    x: np.ndarray,
    y: np.ndarray,
    net_config: NetworkConfig,
    train_config: TrainConfig,
    init: Params | None = None,
) -> TrainReport:
    """Mini-batch Adam on MSE. ``x`` is (B, C, S), ``y`` is (B, C).

    Initialisation and per-epoch shuffling derive from ``train_config.seed``,
    so two calls with equal inputs give bit-identical parameters.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 3 or len(x) == 0:
        raise InvalidArgumentError(f"need a non-empty (B, C, S) training batch, got {x.shape}")
    if len(y) != len(x):
        raise InvalidArgumentError(f"{len(x)} windows but {len(y)} labels")

    seed = train_config.seed
    params = init_params(net_config, derive_seed(seed, "init")) if init is None else {k: v.copy() for k, v in init.items()}
    check_params(params, net_config)
    state = AdamState.zeros_like(params)
    shuffle_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(derive_seed(seed, "shuffle"))))

    n = len(x)
    bs = train_config.batch_size
    losses, lrs = [], []
    t = 0
    start = time.perf_counter()
    for epoch in range(train_config.epochs):
        lr = train_config.lr_at(epoch)
        order = shuffle_rng.permutation(n)
        total = 0.0
        for bi, lo in enumerate(range(0, n, bs)):
            batch = order[lo : lo + bs]
            loss, grads = backward(params, net_config, x[batch], y[batch])
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch, bi, loss)
            t += 1
            params, state = adam_step(
                params, grads, state, t, lr, train_config.beta1, train_config.beta2, train_config.eps
            )
            total += loss * len(batch)
        losses.append(total / n)
        lrs.append(lr)
        if log.isEnabledFor(logging.DEBUG) and (epoch % 100 == 0 or epoch == train_config.epochs - 1):
            log.debug("epoch %d loss %.6g lr %.3g", epoch, losses[-1], lr)
    return TrainReport(losses, lrs, params, seed, time.perf_counter() - start, t)
