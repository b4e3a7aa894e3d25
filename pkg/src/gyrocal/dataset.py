"""Recording collections: ingestion, virtual generation, splits and windowing.

On-disk layout (one dataset per root directory)::

    <root>/manifest.json
    <root>/<brand>/<gyro_id>/rec_0000.csv

Recording CSV header is ``t_s,gyro_x_dps,gyro_y_dps,gyro_z_dps``. The
manifest carries ``brand``, ``sample_rate_hz``, optional ``noise_std_dps``
and ``gyros: [{gyro_id, recordings: [relative paths], ...}]``. Optional
per-gyro keys written by :func:`write_dataset` are ``provenance``,
``recording_indices``, ``seeds`` and ``gt_bias_dps`` (one 3-vector per
recording).
"""

from __future__ import annotations

import csv
import json
import math
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Literal, Sequence

import numpy as np

from gyrocal.error_model import (
    BIAS_STREAM,
    BiasPrior,
    GyroRecording,
    as_rate,
    derive_seed,
    sample_virtual_bias,
    simulate_stationary_recording,
)
from gyrocal.exceptions import DatasetLoadError, InvalidArgumentError

CSV_HEADER = ("t_s", "gyro_x_dps", "gyro_y_dps", "gyro_z_dps")
MANIFEST_FORMAT = "gyrocal-dataset/1"

ChannelMode = Literal["per-imu-3ch", "stacked-3N-ch"]


def window_length(window_s: float, sample_rate: float) -> int:
    """Seconds to samples, rounding half up."""
    return int(math.floor(window_s * sample_rate + 0.5))


@dataclass(frozen=True, eq=False)
class Dataset:
    recordings: tuple[GyroRecording, ...]
    brand: str
    sample_rate: float
    noise_std: np.ndarray | None = None

    def __post_init__(self):
        recs = tuple(self.recordings)
        seen = set()
        for r in recs:
            if r.sample_rate != self.sample_rate:
                raise InvalidArgumentError(
                    f"recording {r.key} has rate {r.sample_rate} Hz, dataset has {self.sample_rate} Hz"
                )
            if r.key in seen:
                raise InvalidArgumentError(f"duplicate recording {r.key}")
            seen.add(r.key)
        object.__setattr__(self, "recordings", recs)
        object.__setattr__(self, "sample_rate", float(self.sample_rate))
        if self.noise_std is not None:
            object.__setattr__(self, "noise_std", as_rate(self.noise_std, "noise_std"))

    def __len__(self) -> int:
        return len(self.recordings)

    def __iter__(self) -> Iterator[GyroRecording]:
        return iter(self.recordings)

    @property
    def gyro_ids(self) -> list[str]:
        return list(OrderedDict.fromkeys(r.gyro_id for r in self.recordings))

    def for_gyro(self, gyro_id: str) -> list[GyroRecording]:
        return [r for r in self.recordings if r.gyro_id == gyro_id]

    def subset(self, gyro_ids: Iterable[str]) -> Dataset:
        wanted = list(gyro_ids)
        missing = set(wanted) - set(self.gyro_ids)
        if missing:
            raise InvalidArgumentError(f"unknown gyro ids {sorted(missing)}")
        recs = [r for g in wanted for r in self.for_gyro(g)]
        return Dataset(tuple(recs), self.brand, self.sample_rate, self.noise_std)

    @property
    def total_samples(self) -> int:
        return sum(r.n_samples for r in self.recordings)

    @property
    def hours(self) -> float:
        return self.total_samples / self.sample_rate / 3600.0

    def summary(self) -> dict:
        return {
            "brand": self.brand,
            "sample_rate_hz": self.sample_rate,
            "gyros": len(self.gyro_ids),
            "recordings": len(self.recordings),
            "samples": self.total_samples,
            "hours": self.hours,
        }


def empty_like(dataset: Dataset) -> Dataset:
    return Dataset((), dataset.brand, dataset.sample_rate, dataset.noise_std)


def ground_truth_bias(recording: GyroRecording) -> np.ndarray:
    """Per-axis mean over the full recording (the long-duration GT bias)."""
    if recording.n_samples == 0:
        raise InvalidArgumentError("empty recording")
    return recording.samples.mean(axis=0)


@dataclass(frozen=True, eq=False)
class TrainingExample:
    """``window`` is (channels, S) in deg/s, channels ordered g1x, g1y, g1z, g2x, ..."""

    window: np.ndarray
    label: np.ndarray
    sources: tuple[tuple[str, int], ...]

    @property
    def channels(self) -> int:
        return self.window.shape[0]


def stack_examples(examples: Sequence[TrainingExample]) -> tuple[np.ndarray, np.ndarray]:
    """Batch arrays X (B, C, S) and Y (B, C)."""
    if not examples:
        raise InvalidArgumentError("no examples to stack")
    x = np.stack([e.window for e in examples])
    y = np.stack([e.label for e in examples])
    return x, y


def _groups_for(recordings: Sequence[GyroRecording], gyro_grouping) -> list[tuple[str, ...]]:
    ids = list(OrderedDict.fromkeys(r.gyro_id for r in recordings))
    if gyro_grouping is None:
        return [tuple(ids)]
    groups = [tuple(g) for g in gyro_grouping]
    for g in groups:
        unknown = set(g) - set(ids)
        if unknown:
            raise InvalidArgumentError(f"grouping names unknown gyros {sorted(unknown)}")
    return groups


def make_windows(
    recordings: Iterable[GyroRecording],
    window_s: float,
    channel_mode: ChannelMode = "per-imu-3ch",
    gyro_grouping: Sequence[Sequence[str]] | None = None,
) -> list[TrainingExample]:
    """Cut one start-of-recording window per recording (or per synchronized group).

    ``per-imu-3ch`` yields a 3-channel example for every recording.
    ``stacked-3N-ch`` stacks the gyros of each group (default: all gyros, in
    first-seen order) that share a recording index into one 3N-channel
    example. Labels are full-recording GT biases in the same channel order.
    """
    recs = list(recordings)
    if not recs:
        raise InvalidArgumentError("no recordings to window")
    rate = recs[0].sample_rate
    if any(r.sample_rate != rate for r in recs):
        raise InvalidArgumentError("recordings have mixed sample rates")
    s = window_length(window_s, rate)
    if s < 1:
        raise InvalidArgumentError(f"window of {window_s} s is shorter than one sample at {rate} Hz")

    def cut(r: GyroRecording) -> np.ndarray:
        if s > r.n_samples:
            raise InvalidArgumentError(
                f"window of {s} samples is longer than recording {r.key} ({r.n_samples} samples)"
            )
        return r.samples[:s].T

    if channel_mode == "per-imu-3ch":
        if gyro_grouping is not None:
            keep = {g for group in gyro_grouping for g in group}
            recs = [r for r in recs if r.gyro_id in keep]
        return [TrainingExample(cut(r), ground_truth_bias(r), (r.key,)) for r in recs]

    if channel_mode != "stacked-3N-ch":
        raise InvalidArgumentError(f"unknown channel mode {channel_mode!r}")

    by_key = {r.key: r for r in recs}
    examples = []
    for group in _groups_for(recs, gyro_grouping):
        index_sets = [{r.recording_index for r in recs if r.gyro_id == g} for g in group]
        common = sorted(set.intersection(*index_sets))
        for k in common:
            members = [by_key[(g, k)] for g in group]
            lengths = {m.n_samples for m in members}
            if len(lengths) != 1:
                raise InvalidArgumentError(f"group {group} recording {k} has mismatched lengths {sorted(lengths)}")
            window = np.concatenate([cut(m) for m in members], axis=0)
            label = np.concatenate([ground_truth_bias(m) for m in members])
            examples.append(TrainingExample(window, label, tuple(m.key for m in members)))
    return examples


def generate_virtual_dataset(
    n_gyros: int,
    recordings_per_gyro: int,
    n_samples: int,
    prior: BiasPrior,
    noise_std,
    sample_rate: float,
    master_seed: int,
    brand: str = "virtual",
    id_prefix: str = "vg",
) -> Dataset:
    """Virtual gyros, each with one prior-drawn bias reused for all its recordings."""
    for name, v in (("n_gyros", n_gyros), ("recordings_per_gyro", recordings_per_gyro), ("n_samples", n_samples)):
        if v < 1:
            raise InvalidArgumentError(f"{name} must be >= 1, got {v}")
    recs = []
    width = max(2, len(str(n_gyros - 1)))
    for i in range(n_gyros):
        gid = f"{id_prefix}{i:0{width}d}"
        bias = sample_virtual_bias(prior, derive_seed(master_seed, gid, BIAS_STREAM))
        for k in range(recordings_per_gyro):
            seed = derive_seed(master_seed, gid, k)
            recs.append(
                simulate_stationary_recording(bias, noise_std, n_samples, sample_rate, seed, gyro_id=gid, recording_index=k)
            )
    return Dataset(tuple(recs), brand, sample_rate, noise_std)


def merge(real: Dataset, virtual: Dataset) -> Dataset:
    if len(virtual) == 0:
        return real
    if real.sample_rate != virtual.sample_rate:
        raise InvalidArgumentError(f"sample rates differ: {real.sample_rate} Hz vs {virtual.sample_rate} Hz")
    clash = set(real.gyro_ids) & set(virtual.gyro_ids)
    if clash:
        raise InvalidArgumentError(f"gyro ids present in both datasets: {sorted(clash)}")
    return Dataset(real.recordings + virtual.recordings, real.brand, real.sample_rate, real.noise_std)


@dataclass(frozen=True)
class SplitPolicy:
    """Recording-level train/test partition.

    Either ``train_fraction`` or explicit ``test_indices`` (recording indices)
    must be given. Virtual recordings only ever go to training unless
    ``include_virtual_in_test`` is set, which is meant for purely synthetic
    experiments where the virtual set stands in for real data.
    """

    train_fraction: float | None = None
    test_indices: tuple[int, ...] | None = None
    seed: int = 0
    include_virtual_in_test: bool = False

    def __post_init__(self):
        if (self.train_fraction is None) == (self.test_indices is None):
            raise InvalidArgumentError("give exactly one of train_fraction or test_indices")
        if self.train_fraction is not None and not 0.0 < self.train_fraction < 1.0:
            raise InvalidArgumentError(f"train_fraction must be in (0, 1), got {self.train_fraction}")


def split_train_test(dataset: Dataset, policy: SplitPolicy) -> tuple[Dataset, Dataset]:
    """Partition by recording index, shared across gyros so synchronized groups stay whole."""

    def eligible(r: GyroRecording) -> bool:
        return r.provenance == "real" or policy.include_virtual_in_test

    indices = sorted({r.recording_index for r in dataset if eligible(r)})
    if policy.test_indices is not None:
        test_idx = set(policy.test_indices)
        unknown = test_idx - set(indices)
        if unknown:
            raise InvalidArgumentError(f"test indices {sorted(unknown)} not present among eligible recordings")
    else:
        if len(indices) < 2:
            raise InvalidArgumentError("need at least 2 recording indices to split")
        n_train = int(math.floor(policy.train_fraction * len(indices) + 0.5))
        if n_train <= 0 or n_train >= len(indices):
            raise InvalidArgumentError(
                f"train_fraction {policy.train_fraction} leaves an empty split over {len(indices)} recordings"
            )
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(policy.seed)))
        perm = rng.permutation(len(indices))
        test_idx = {indices[i] for i in perm[n_train:]}
    if not test_idx:
        raise InvalidArgumentError("test split is empty")

    train, test = [], []
    for r in dataset:
        (test if eligible(r) and r.recording_index in test_idx else train).append(r)
    make = lambda rs: Dataset(tuple(rs), dataset.brand, dataset.sample_rate, dataset.noise_std)  # noqa: E731
    return make(train), make(test)


# -- CSV / manifest I/O ------------------------------------------------------


def write_recording_csv(recording: GyroRecording, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.column_stack([recording.times, recording.samples])
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(",".join(CSV_HEADER) + "\n")
        np.savetxt(f, data, fmt="%.17g", delimiter=",")


def read_recording_csv(path: Path) -> tuple[np.ndarray, np.ndarray]:
    """Return (times, samples) from one recording CSV; errors name file and line."""
    path = Path(path)
    if not path.is_file():
        raise DatasetLoadError(path, "file not found")
    rows = []
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise DatasetLoadError(path, f"expected header {','.join(CSV_HEADER)}, got {header}", line=1)
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != 4:
                raise DatasetLoadError(path, f"expected 4 fields, got {len(row)}", line=line)
            try:
                vals = [float(v) for v in row]
            except ValueError as exc:
                raise DatasetLoadError(path, f"malformed number ({exc})", line=line) from None
            if not all(math.isfinite(v) for v in vals):
                raise DatasetLoadError(path, "non-finite value", line=line)
            if rows and vals[0] <= rows[-1][0]:
                raise DatasetLoadError(path, f"timestamp {vals[0]} is not after {rows[-1][0]}", line=line)
            rows.append(vals)
    if not rows:
        raise DatasetLoadError(path, "no samples")
    arr = np.asarray(rows, dtype=np.float64)
    return arr[:, 0], arr[:, 1:]


def write_dataset(dataset: Dataset, root) -> Path:
    """Serialize a dataset under ``root``; returns the manifest path."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    gyros = []
    for gid in dataset.gyro_ids:
        recs = dataset.for_gyro(gid)
        paths = []
        for r in recs:
            rel = Path(dataset.brand) / gid / f"rec_{r.recording_index:04d}.csv"
            write_recording_csv(r, root / rel)
            paths.append(rel.as_posix())
        entry = {
            "gyro_id": gid,
            "provenance": recs[0].provenance,
            "recordings": paths,
            "recording_indices": [r.recording_index for r in recs],
        }
        if any(r.seed is not None for r in recs):
            entry["seeds"] = [r.seed for r in recs]
        if all(r.true_bias is not None for r in recs):
            entry["gt_bias_dps"] = [r.true_bias.tolist() for r in recs]
        gyros.append(entry)
    manifest = {
        "format": MANIFEST_FORMAT,
        "brand": dataset.brand,
        "sample_rate_hz": dataset.sample_rate,
    }
    if dataset.noise_std is not None:
        manifest["noise_std_dps"] = dataset.noise_std.tolist()
    manifest["gyros"] = gyros
    path = root / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path


def ingest_csv(manifest_path, rate_tolerance: float = 0.25) -> Dataset:
    """Load every recording listed in a manifest.

    The sampling rate implied by the median timestamp step must agree with
    ``sample_rate_hz`` within ``rate_tolerance`` (relative).
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise DatasetLoadError(manifest_path, "manifest not found")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetLoadError(manifest_path, f"invalid JSON ({exc.msg})", line=exc.lineno) from None
    for key in ("brand", "sample_rate_hz", "gyros"):
        if key not in manifest:
            raise DatasetLoadError(manifest_path, f"missing field {key!r}")
    rate = float(manifest["sample_rate_hz"])
    if not rate > 0:
        raise DatasetLoadError(manifest_path, f"sample_rate_hz must be > 0, got {rate}")
    expected_n = manifest.get("samples_per_recording")
    base = manifest_path.parent

    ids = [g.get("gyro_id") for g in manifest["gyros"]]
    if len(set(ids)) != len(ids) or None in ids:
        raise DatasetLoadError(manifest_path, f"gyro ids must be present and unique, got {ids}")

    recs = []
    for g in manifest["gyros"]:
        gid = str(g["gyro_id"])
        paths = g.get("recordings", [])
        n = len(paths)
        indices = g.get("recording_indices", list(range(n)))
        seeds = g.get("seeds", [None] * n)
        gts = g.get("gt_bias_dps", [None] * n)
        if not (len(indices) == len(seeds) == len(gts) == n):
            raise DatasetLoadError(manifest_path, f"gyro {gid}: per-recording lists differ in length")
        for rel, k, seed, gt in zip(paths, indices, seeds, gts):
            fpath = base / rel
            times, samples = read_recording_csv(fpath)
            if expected_n is not None and len(times) != expected_n:
                raise DatasetLoadError(fpath, f"expected {expected_n} samples, got {len(times)}")
            if len(times) > 1:
                implied = 1.0 / float(np.median(np.diff(times)))
                if abs(implied - rate) > rate_tolerance * rate:
                    raise DatasetLoadError(fpath, f"timestamps imply {implied:.3f} Hz, manifest says {rate} Hz")
            recs.append(
                GyroRecording(
                    samples=samples,
                    sample_rate=rate,
                    gyro_id=gid,
                    provenance=g.get("provenance", "real"),
                    recording_index=int(k),
                    seed=seed,
                    true_bias=gt,
                )
            )
    return Dataset(tuple(recs), str(manifest["brand"]), rate, manifest.get("noise_std_dps"))
