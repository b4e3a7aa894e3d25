"""Gyroscope measurement error model and virtual stationary recordings.

A measured rate is modelled as ``M @ w + b + noise`` with ``M`` the
scale-factor / misalignment matrix, ``b`` the bias and white Gaussian noise
drawn independently per axis. All rates are in deg/s.

Seed derivation
---------------
Every random stream is a PCG64 generator seeded from a numpy
``SeedSequence``:

* ``derive_seed(master_seed, gyro_id, recording_index)`` maps a master seed
  and a recording's identity to a 64-bit recording seed. String keys are
  hashed with CRC-32 of their UTF-8 bytes.
* Inside a recording, axis ``a`` (0=x, 1=y, 2=z) draws standard normals from
  ``PCG64(SeedSequence(recording_seed, spawn_key=(a,)))``.
* The bias of a virtual gyro is drawn from
  ``PCG64(SeedSequence(derive_seed(master_seed, gyro_id, BIAS_STREAM)))``.

Each recording therefore owns an independent stream and can be generated in
any order.
"""

from __future__ import annotations

import dataclasses
import zlib
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from gyrocal.exceptions import InvalidArgumentError

Provenance = Literal["real", "virtual"]

# recording_index used for the per-gyro bias draw; never a valid recording index
BIAS_STREAM = 2**32 - 1


def as_rate(value, name="rate") -> np.ndarray:
    """Validate a 3-axis angular rate (deg/s) and return it as float64."""
    arr = np.asarray(value, dtype=np.float64)
    if arr.shape == ():
        arr = np.full(3, float(arr))
    if arr.shape != (3,):
        raise InvalidArgumentError(f"{name} must have 3 components, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} must be finite, got {arr}")
    return arr


def _as_std(value, name="noise_std") -> np.ndarray:
    std = as_rate(value, name)
    if np.any(std < 0):
        raise InvalidArgumentError(f"{name} must be >= 0, got {std}")
    return std


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise InvalidArgumentError(f"seed keys must be non-negative, got {key}")
        return int(key)
    return zlib.crc32(str(key).encode("utf-8"))


def derive_seed(master_seed: int, *keys) -> int:
    """Mix a master seed with identifying keys into a 64-bit seed."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(_key_to_int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def axis_normals(seed: int, n: int) -> np.ndarray:
    """Standard normal draws of shape (n, 3), one independent stream per axis."""
    out = np.empty((n, 3))
    for axis in range(3):
        gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(axis,))))
        out[:, axis] = gen.standard_normal(n)
    return out


@dataclass(frozen=True)
class ErrorModelParams:
    m_matrix: np.ndarray = field(default_factory=lambda: np.eye(3))
    bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    noise_std: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        m = np.asarray(self.m_matrix, dtype=np.float64)
        if m.shape != (3, 3) or not np.all(np.isfinite(m)):
            raise InvalidArgumentError(f"m_matrix must be a finite 3x3 matrix, got {m!r}")
        object.__setattr__(self, "m_matrix", m)
        object.__setattr__(self, "bias", as_rate(self.bias, "bias"))
        object.__setattr__(self, "noise_std", _as_std(self.noise_std))


@dataclass(frozen=True)
class BiasPrior:
    """Distribution of per-gyro bias values, in deg/s.

    Use :meth:`uniform` or :meth:`gaussian` rather than the raw constructor.
    """

    kind: Literal["uniform", "gaussian"]
    low: np.ndarray | None = None
    high: np.ndarray | None = None
    mean: np.ndarray | None = None
    std: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == "uniform":
            low = as_rate(self.low, "low")
            high = as_rate(self.high, "high")
            if np.any(low > high):
                raise InvalidArgumentError(f"uniform prior needs low <= high, got {low} > {high}")
            object.__setattr__(self, "low", low)
            object.__setattr__(self, "high", high)
        elif self.kind == "gaussian":
            object.__setattr__(self, "mean", as_rate(self.mean, "mean"))
            object.__setattr__(self, "std", _as_std(self.std, "std"))
        else:
            raise InvalidArgumentError(f"unknown prior kind {self.kind!r}")

    @classmethod
    def uniform(cls, low, high) -> BiasPrior:
        return cls("uniform", low=low, high=high)

    @classmethod
    def gaussian(cls, mean, std) -> BiasPrior:
        return cls("gaussian", mean=mean, std=std)

    @property
    def prior_mean(self) -> np.ndarray:
        if self.kind == "uniform":
            return 0.5 * (self.low + self.high)
        return self.mean.copy()

    @property
    def prior_std(self) -> np.ndarray:
        if self.kind == "uniform":
            return (self.high - self.low) / np.sqrt(12.0)
        return self.std.copy()

    def to_dict(self) -> dict:
        if self.kind == "uniform":
            return {"kind": "uniform", "low": self.low.tolist(), "high": self.high.tolist()}
        return {"kind": "gaussian", "mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> BiasPrior:
        kind = d.get("kind")
        if kind == "uniform":
            return cls.uniform(d["low"], d["high"])
        if kind == "gaussian":
            return cls.gaussian(d["mean"], d["std"])
        raise InvalidArgumentError(f"unknown prior kind {kind!r}")


@dataclass(frozen=True, eq=False)
class GyroRecording:
    """A 3-axis angular-rate recording from one gyro unit.

    ``samples`` has shape (n, 3) in deg/s. ``recording_index`` identifies the
    power cycle; recordings of different gyros sharing an index are assumed
    time-synchronized.
    """

    samples: np.ndarray
    sample_rate: float
    gyro_id: str
    provenance: Provenance = "real"
    recording_index: int = 0
    seed: int | None = None
    true_bias: np.ndarray | None = None

    def __post_init__(self):
        s = np.array(self.samples, dtype=np.float64)
        if s.ndim != 2 or s.shape[1] != 3 or s.shape[0] == 0:
            raise InvalidArgumentError(f"samples must have shape (n>=1, 3), got {s.shape}")
        if not np.all(np.isfinite(s)):
            raise InvalidArgumentError(f"recording {self.gyro_id}/{self.recording_index} has non-finite samples")
        if not self.sample_rate > 0:
            raise InvalidArgumentError(f"sample_rate must be > 0, got {self.sample_rate}")
        if self.provenance not in ("real", "virtual"):
            raise InvalidArgumentError(f"provenance must be 'real' or 'virtual', got {self.provenance!r}")
        s.flags.writeable = False
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "sample_rate", float(self.sample_rate))
        object.__setattr__(self, "gyro_id", str(self.gyro_id))
        if self.true_bias is not None:
            object.__setattr__(self, "true_bias", as_rate(self.true_bias, "true_bias"))

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_samples) / self.sample_rate

    @property
    def key(self) -> tuple[str, int]:
        return (self.gyro_id, self.recording_index)

    def replace(self, **changes) -> GyroRecording:
        return dataclasses.replace(self, **changes)


def apply_error_model(true_rates, params: ErrorModelParams, seed: int) -> np.ndarray:
    """Corrupt true rates (n, 3) with scale/misalignment, bias and white noise."""
    w = np.asarray(true_rates, dtype=np.float64)
    if w.ndim == 1 and w.shape == (3,):
        w = w[None, :]
    if w.ndim != 2 or w.shape[1] != 3:
        raise InvalidArgumentError(f"true_rates must have shape (n, 3), got {w.shape}")
    if w.shape[0] == 0:
        raise InvalidArgumentError("true_rates is empty")
    m, b, std = params.m_matrix, params.bias, params.noise_std
    z = axis_normals(seed, w.shape[0])
    out = np.empty_like(w)
    # explicit row expansion keeps the summation order fixed (no BLAS reordering)
    for i in range(3):
        out[:, i] = m[i, 0] * w[:, 0] + m[i, 1] * w[:, 1] + m[i, 2] * w[:, 2] + b[i] + std[i] * z[:, i]
    return out


def simulate_stationary_recording(
    bias,
    noise_std,
    n_samples: int,
    sample_rate: float,
    seed: int,
    gyro_id: str = "virtual",
    recording_index: int = 0,
) -> GyroRecording:
    """Stationary virtual recording: i.i.d. Gaussian samples around ``bias``."""
    if n_samples < 1:
        raise InvalidArgumentError(f"n_samples must be >= 1, got {n_samples}")
    b = as_rate(bias, "bias")
    std = _as_std(noise_std)
    samples = b + std * axis_normals(seed, n_samples)
    return GyroRecording(
        samples=samples,
        sample_rate=sample_rate,
        gyro_id=gyro_id,
        provenance="virtual",
        recording_index=recording_index,
        seed=int(seed),
        true_bias=b,
    )


def sample_virtual_bias(prior: BiasPrior, seed: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))
    if prior.kind == "uniform":
        return rng.uniform(prior.low, prior.high)
    return rng.normal(prior.mean, prior.std)


def calibrate(recording: GyroRecording, bias_estimate) -> GyroRecording:
    """Subtract a bias estimate from every sample; metadata is kept."""
    b = as_rate(bias_estimate, "bias_estimate")
    return recording.replace(samples=recording.samples - b)


def estimate_noise_std(recording: GyroRecording) -> np.ndarray:
    """Per-axis sample std after mean removal, for configuring virtual gyros."""
    if recording.n_samples < 2:
        raise InvalidArgumentError("need at least 2 samples to estimate noise std")
    return recording.samples.std(axis=0, ddof=1)
