"""Zero-order (averaging) bias calibration and its convergence curves."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from gyrocal.dataset import window_length
from gyrocal.error_model import GyroRecording
from gyrocal.exceptions import InvalidArgumentError


@dataclass(frozen=True, eq=False)
class ConvergenceCurve:
    """Running estimate over time.

    ``times[k]`` is the elapsed calibration time after k+1 samples, i.e.
    ``(k + 1) / rate``, so that the curve read at ``t`` equals the estimate
    built from ``round(t * rate)`` samples. ``values`` is (n, 3) deg/s.
    """

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if len(self.times) != len(self.values):
            raise InvalidArgumentError("times and values differ in length")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise InvalidArgumentError("times must be strictly increasing")

    def to_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        data = np.column_stack([self.times, self.values])
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write("time_s,x_dps,y_dps,z_dps\n")
            np.savetxt(f, data, fmt="%.17g", delimiter=",")


def running_mean(samples: np.ndarray) -> np.ndarray:
    """Incremental mean along axis 0: m[k] = m[k-1] + (x[k] - m[k-1]) / (k + 1).

    Works for any trailing shape, so many recordings can be advanced at once.
    """
    x = np.asarray(samples, dtype=np.float64)
    out = np.empty_like(x)
    m = np.zeros_like(x[0])
    for k in range(x.shape[0]):
        m = m + (x[k] - m) / (k + 1)
        out[k] = m
    return out


def zero_order_bias(recording: GyroRecording, window_s: float) -> np.ndarray:
    """Mean of the first round(window_s * rate) samples."""
    n = window_length(window_s, recording.sample_rate)
    if window_s <= 0 or n < 1 or n > recording.n_samples:
        raise InvalidArgumentError(
            f"window of {window_s} s ({n} samples) outside recording of {recording.duration_s} s"
        )
    return recording.samples[:n].mean(axis=0)


def _curve_times(n: int, rate: float) -> np.ndarray:
    return np.arange(1, n + 1) / rate


def running_average_curve(recording: GyroRecording) -> ConvergenceCurve:
    values = running_mean(recording.samples)
    return ConvergenceCurve(_curve_times(recording.n_samples, recording.sample_rate), values)


def mg_running_average(recordings: Sequence[GyroRecording]) -> ConvergenceCurve:
    """Running average of the across-gyro mean signal (virtual gyro).

    Converges to the mean of the member biases.
    """
    recs = list(recordings)
    if not recs:
        raise InvalidArgumentError("need at least one recording")
    if len({r.n_samples for r in recs}) != 1 or len({r.sample_rate for r in recs}) != 1:
        raise InvalidArgumentError("recordings must share length and sample rate")
    if len(recs) == 1:
        return running_average_curve(recs[0])
    fused = np.mean(np.stack([r.samples for r in recs]), axis=0)
    return ConvergenceCurve(_curve_times(recs[0].n_samples, recs[0].sample_rate), running_mean(fused))
