"""RMSE metric, model-based running-RMSE curve, crossing time and reports."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import integrate

from gyrocal.calib import running_mean
from gyrocal.dataset import ground_truth_bias, make_windows, stack_examples, window_length
from gyrocal.error_model import BiasPrior, GyroRecording, as_rate
from gyrocal.exceptions import InvalidArgumentError, ShapeError


def rmse(estimates, ground_truths) -> float:
    """Root mean square error pooled over every component."""
    e = np.asarray(estimates, dtype=np.float64)
    g = np.asarray(ground_truths, dtype=np.float64)
    if e.shape != g.shape:
        raise ShapeError(f"estimates shape {e.shape} != ground truths shape {g.shape}")
    if e.size == 0:
        raise InvalidArgumentError("rmse of an empty set")
    return float(np.sqrt(np.mean((e - g) ** 2)))


@dataclass(frozen=True, eq=False)
class RmseCurve:
    """RMSE (deg/s) against elapsed calibration time (s)."""

    times: np.ndarray
    rmse: np.ndarray

    def __post_init__(self):
        if len(self.times) == 0 or len(self.times) != len(self.rmse):
            raise InvalidArgumentError("curve needs equal, non-zero numbers of times and values")
        if np.any(np.diff(self.times) <= 0):
            raise InvalidArgumentError("curve times must be strictly increasing")
        if np.any(self.rmse < 0):
            raise InvalidArgumentError("rmse values must be >= 0")

    def at(self, t: float) -> float:
        """Linearly interpolated curve value at time ``t``."""
        if not self.times[0] <= t <= self.times[-1]:
            raise InvalidArgumentError(f"t={t} s outside curve span [{self.times[0]}, {self.times[-1]}] s")
        return float(np.interp(t, self.times, self.rmse))

    def to_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write("time_s,rmse_dps\n")
            np.savetxt(f, np.column_stack([self.times, self.rmse]), fmt="%.17g", delimiter=",")


def model_based_rmse_curve(test_recordings: Iterable[GyroRecording]) -> RmseCurve:
    """RMSE of the running average vs each recording's GT bias, at every sample."""
    recs = list(test_recordings)
    if not recs:
        raise InvalidArgumentError("empty test set")
    if len({r.n_samples for r in recs}) != 1 or len({r.sample_rate for r in recs}) != 1:
        raise InvalidArgumentError("test recordings must share length and sample rate")
    stacked = np.stack([r.samples for r in recs], axis=1)  # (n, R, 3)
    gt = np.stack([ground_truth_bias(r) for r in recs])
    running = running_mean(stacked)
    curve = np.sqrt(np.mean((running - gt) ** 2, axis=(1, 2)))
    n, rate = recs[0].n_samples, recs[0].sample_rate
    return RmseCurve(np.arange(1, n + 1) / rate, curve)


def nn_rmse_at_window(model, test_set, window_s: float, channel_mode="per-imu-3ch", gyro_grouping=None) -> float:
    """RMSE of ``model.predict`` on start-of-recording windows against GT labels.

    ``model`` needs ``predict(batch)``, ``window_len`` and ``in_channels``.
    """
    recs = list(test_set)
    if not recs:
        raise InvalidArgumentError("empty test set")
    s = window_length(window_s, recs[0].sample_rate)
    if s != model.window_len:
        raise InvalidArgumentError(f"model expects {model.window_len}-sample windows, {window_s} s gives {s}")
    examples = make_windows(recs, window_s, channel_mode, gyro_grouping)
    x, y = stack_examples(examples)
    if x.shape[1] != model.in_channels:
        raise InvalidArgumentError(f"model expects {model.in_channels} channels, test windows have {x.shape[1]}")
    return rmse(model.predict(x), y)


def crossing_time(curve: RmseCurve, target_rmse: float) -> float | None:
    """Earliest time the curve reaches ``target_rmse`` (None if it never does)."""
    r, t = curve.rmse, curve.times
    hits = np.flatnonzero(r <= target_rmse)
    if hits.size == 0:
        return None
    i = int(hits[0])
    if i == 0:
        return float(t[0])
    r0, r1 = r[i - 1], r[i]
    return float(t[i - 1] + (target_rmse - r0) * (t[i] - t[i - 1]) / (r1 - r0))


@dataclass(frozen=True)
class ComparisonReport:
    window_s: float
    nn_rmse: float
    model_based_rmse_at_window: float
    crossing_time_s: float | None
    time_improvement_pct: float | None
    accuracy_improvement_pct: float
    crossing_reached: bool

    def to_dict(self) -> dict:
        return asdict(self)


def improvement_report(nn_window_s: float, nn_rmse: float, curve: RmseCurve) -> ComparisonReport:
    baseline = curve.at(nn_window_s)
    t_cross = crossing_time(curve, nn_rmse)
    time_pct = None if t_cross is None or t_cross == 0 else 100.0 * (t_cross - nn_window_s) / t_cross
    acc_pct = 100.0 * (baseline - nn_rmse) / baseline if baseline > 0 else (0.0 if nn_rmse == 0 else -math.inf)
    return ComparisonReport(
        window_s=float(nn_window_s),
        nn_rmse=float(nn_rmse),
        model_based_rmse_at_window=baseline,
        crossing_time_s=t_cross,
        time_improvement_pct=time_pct,
        accuracy_improvement_pct=acc_pct,
        crossing_reached=t_cross is not None,
    )


def write_report_json(path, reports: Sequence[ComparisonReport], meta: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"meta": meta or {}, "reports": [r.to_dict() for r in reports]}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _fmt_pct(v) -> str:
    return "not reached" if v is None else f"{v:.0f}"


def render_table(rows: Sequence[tuple[str, str, ComparisonReport]]) -> str:
    """Plain-text table: (method, gyroscopes, report) per row."""
    headers = (
        "Method",
        "Number of gyroscopes",
        "Window [s]",
        "Calibration time (same performance) [%]",
        "Accuracy improvement (same calibration time) [%]",
    )
    body = [
        (m, g, f"{r.window_s:g}", _fmt_pct(r.time_improvement_pct), _fmt_pct(r.accuracy_improvement_pct))
        for m, g, r in rows
    ]
    widths = [max(len(h), *(len(b[i]) for b in body)) if body else len(h) for i, h in enumerate(headers)]
    line = lambda cells: "| " + " | ".join(c.ljust(w) for c, w in zip(cells, widths)) + " |"  # noqa: E731
    sep = "|" + "|".join("-" * (w + 2) for w in widths) + "|"
    return "\n".join([line(headers), sep, *(line(b) for b in body)]) + "\n"


# -- Bayes posterior-mean oracle ---------------------------------------------


def _uniform_posterior_mean(xbar: float, s: float, low: float, high: float) -> float:
    if low == high:
        return low
    c = min(max(xbar, low), high)
    d0 = abs(xbar - c)
    lo, hi = max(low, c - 40.0 * s), min(high, c + 40.0 * s)

    def weight(u):
        # peak of the truncated likelihood scaled to 1
        return math.exp(-((u - xbar) ** 2 - d0**2) / (2.0 * s * s))

    # den is O(s); num can cancel to ~0, so it gets an absolute tolerance
    # that keeps the posterior-mean error below 1e-12 s
    den, _ = integrate.quad(weight, lo, hi, limit=200, epsabs=0.0, epsrel=1e-11)
    num, _ = integrate.quad(lambda u: (u - c) * weight(u), lo, hi, limit=200, epsabs=1e-12 * s * s, epsrel=1e-11)
    return c + num / den


def bayes_posterior_mean(window, noise_std, prior: BiasPrior) -> np.ndarray:
    """Posterior mean of the bias given stationary samples (S, 3), known noise std and prior."""
    w = np.asarray(window, dtype=np.float64)
    if w.ndim != 2 or w.shape[1] != 3 or w.shape[0] == 0:
        raise ShapeError(f"window must be (S>=1, 3), got {w.shape}")
    sigma = as_rate(noise_std, "noise_std")
    if np.any(sigma <= 0):
        raise InvalidArgumentError("noise_std must be > 0 for the posterior")
    n = w.shape[0]
    xbar = w.mean(axis=0)
    if prior.kind == "gaussian":
        tau2 = prior.std**2
        return (n * tau2 * xbar + sigma**2 * prior.mean) / (n * tau2 + sigma**2)
    s = sigma / math.sqrt(n)
    return np.array([_uniform_posterior_mean(xbar[a], s[a], prior.low[a], prior.high[a]) for a in range(3)])


def bayes_oracle_rmse(test_set: Iterable[GyroRecording], window_s: float, noise_std, prior: BiasPrior) -> float:
    recs = list(test_set)
    if not recs:
        raise InvalidArgumentError("empty test set")
    s = window_length(window_s, recs[0].sample_rate)
    est = np.stack([bayes_posterior_mean(r.samples[:s], noise_std, prior) for r in recs])
    gt = np.stack([ground_truth_bias(r) for r in recs])
    return rmse(est, gt)
