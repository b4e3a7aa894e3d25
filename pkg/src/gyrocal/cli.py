"""Command-line front end: simulate, ingest, train, eval, compare.

Every command reads a single JSON experiment spec (``--spec``); flags
override spec fields. Example spec::

    {
      "protocol": "real_plus_virtual2real",
      "seed": 7,
      "window_s": [10, 30],
      "real": {"manifest": "data/sparkfun/manifest.json",
               "gyros": ["imu1"],
               "split": {"train_fraction": 0.94}},
      "virtual": {"generate": {"n_gyros": 24, "recordings_per_gyro": 100,
                               "n_samples": 13000, "sample_rate_hz": 150,
                               "noise_std_dps": 0.04,
                               "prior": {"kind": "uniform",
                                         "low": [-0.5, -0.5, -0.5],
                                         "high": [0.5, 0.5, 0.5]}}},
      "net": {"filters": 16, "kernel_size": 7, "pool_size": 4, "hidden": 64},
      "train": {"epochs": 1200}
    }

Exit codes: 0 success, 1 user or configuration error, 2 internal error.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from gyrocal.dataset import (
    Dataset,
    SplitPolicy,
    generate_virtual_dataset,
    ingest_csv,
    make_windows,
    merge,
    split_train_test,
    stack_examples,
    window_length,
    write_dataset,
)
from gyrocal.error_model import BiasPrior, derive_seed, estimate_noise_std
from gyrocal.evaluation import (
    ComparisonReport,
    improvement_report,
    model_based_rmse_curve,
    nn_rmse_at_window,
    render_table,
    write_report_json,
)
from gyrocal.exceptions import GyroCalError, InvalidArgumentError
from gyrocal.nn import BiasRegressor, NetworkConfig, TrainConfig, load_checkpoint, save_checkpoint, train

log = logging.getLogger("gyrocal")

PROTOCOLS = ("real2real", "real_plus_virtual2real", "stacked_channels")
FROZEN_SPEC = "spec.frozen.json"


class ConfigError(GyroCalError):
    pass


@dataclass
class ExperimentSpec:
    protocol: str = "real2real"
    seed: int = 0
    window_s: list[float] = field(default_factory=lambda: [10.0])
    real: dict | None = None
    virtual: dict | None = None
    net: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    base_dir: Path = Path(".")

    @classmethod
    def from_json(cls, path) -> ExperimentSpec:
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"spec file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
        unknown = set(doc) - {"protocol", "seed", "window_s", "real", "virtual", "net", "train", "out"}
        if unknown:
            raise ConfigError(f"unknown spec fields {sorted(unknown)}")
        doc.pop("out", None)
        return cls(base_dir=path.resolve().parent, **doc)

    def resolve(self, p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else (self.base_dir / q).resolve()

    def validate(self, need_real: bool = True) -> None:
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"protocol must be one of {PROTOCOLS}, got {self.protocol!r}")
        if not self.window_s or any(w <= 0 for w in self.window_s):
            raise ConfigError(f"window lengths must be > 0, got {self.window_s}")
        if need_real:
            if not self.real or "manifest" not in self.real:
                raise ConfigError("spec needs real.manifest")
            if not self.resolve(self.real["manifest"]).is_file():
                raise ConfigError(f"real manifest not found: {self.resolve(self.real['manifest'])}")
        if self.protocol == "real_plus_virtual2real":
            if not self.virtual or not ({"manifest", "generate"} & set(self.virtual)):
                raise ConfigError("real_plus_virtual2real needs virtual.manifest or virtual.generate")
        if self.virtual and "manifest" in self.virtual and not self.resolve(self.virtual["manifest"]).is_file():
            raise ConfigError(f"virtual manifest not found: {self.resolve(self.virtual['manifest'])}")
        self.net_defaults()
        try:
            TrainConfig(**self.train)
        except TypeError as exc:
            raise ConfigError(f"bad train section: {exc}") from None

    def net_defaults(self) -> dict:
        """Network hyperparameters with defaults filled (channels and window come from data)."""
        if {"in_channels", "window_len", "out_dim"} & set(self.net):
            raise ConfigError("net section must not set in_channels, window_len or out_dim")
        try:
            cfg = NetworkConfig(in_channels=3, window_len=10**6, **self.net)
        except TypeError as exc:
            raise ConfigError(f"bad net section: {exc}") from None
        return {k: v for k, v in cfg.to_dict().items() if k not in ("in_channels", "window_len", "out_dim")}

    def frozen(self) -> dict:
        """Fully resolved spec (absolute paths, defaults filled) for provenance."""
        doc = {
            "protocol": self.protocol,
            "seed": self.seed,
            "window_s": [float(w) for w in self.window_s],
            "net": self.net_defaults(),
            "train": {k: v for k, v in TrainConfig(**self.train).to_dict().items() if k != "seed"},
        }
        for key in ("real", "virtual"):
            section = copy.deepcopy(getattr(self, key))
            if section and "manifest" in section:
                section["manifest"] = str(self.resolve(section["manifest"]))
            doc[key] = section
        return doc

    @classmethod
    def from_frozen(cls, doc: dict, base_dir: Path) -> ExperimentSpec:
        train = {k: v for k, v in doc.get("train", {}).items() if k != "seed"}
        return cls(
            protocol=doc["protocol"],
            seed=doc["seed"],
            window_s=doc["window_s"],
            real=doc.get("real"),
            virtual=doc.get("virtual"),
            net=doc.get("net", {}),
            train=train,
            base_dir=base_dir,
        )


def window_tag(window_s: float) -> str:
    return f"w{window_s:g}s"


# -- dataset resolution -------------------------------------------------------


def _generate_from(section: dict, seed: int) -> Dataset:
    g = section["generate"]
    missing = {"n_gyros", "recordings_per_gyro", "n_samples", "prior", "noise_std_dps", "sample_rate_hz"} - set(g)
    if missing:
        raise ConfigError(f"virtual.generate is missing {sorted(missing)}")
    return generate_virtual_dataset(
        n_gyros=g["n_gyros"],
        recordings_per_gyro=g["recordings_per_gyro"],
        n_samples=g["n_samples"],
        prior=BiasPrior.from_dict(g["prior"]),
        noise_std=g["noise_std_dps"],
        sample_rate=g["sample_rate_hz"],
        master_seed=g.get("seed", seed),
        brand=g.get("brand", "virtual"),
        id_prefix=g.get("id_prefix", "vg"),
    )


def load_real(spec: ExperimentSpec) -> Dataset:
    ds = ingest_csv(spec.resolve(spec.real["manifest"]))
    if spec.real.get("gyros"):
        ds = ds.subset(spec.real["gyros"])
    return ds


def load_virtual(spec: ExperimentSpec) -> Dataset | None:
    if not spec.virtual:
        return None
    if "manifest" in spec.virtual:
        ds = ingest_csv(spec.resolve(spec.virtual["manifest"]))
    else:
        ds = _generate_from(spec.virtual, derive_seed(spec.seed, "virtual"))
    if spec.virtual.get("gyros"):
        ds = ds.subset(spec.virtual["gyros"])
    return ds


def split_policy(spec: ExperimentSpec) -> SplitPolicy:
    s = dict(spec.real.get("split", {}))
    if "test_indices" in s:
        s["test_indices"] = tuple(s["test_indices"])
    elif "train_fraction" not in s:
        s["train_fraction"] = 0.94
    s.setdefault("seed", spec.seed)
    return SplitPolicy(**s)


def channel_mode(spec: ExperimentSpec) -> str:
    return "stacked-3N-ch" if spec.protocol == "stacked_channels" else "per-imu-3ch"


def resolve_datasets(spec: ExperimentSpec) -> tuple[Dataset, Dataset]:
    """Training pool and test set for the spec's protocol."""
    real = load_real(spec)
    train_set, test_set = split_train_test(real, split_policy(spec))
    if spec.protocol == "real_plus_virtual2real":
        train_set = merge(train_set, load_virtual(spec))
    test_gyros = spec.real.get("test_gyros")
    if test_gyros:
        test_set = test_set.subset(test_gyros)
    if len(test_set) == 0:
        raise InvalidArgumentError("test split has no recordings")
    return train_set, test_set


def _grouping(spec: ExperimentSpec, ds: Dataset):
    return [ds.gyro_ids] if spec.protocol == "stacked_channels" else None


# -- commands -----------------------------------------------------------------


def cmd_simulate(spec: ExperimentSpec, out: Path) -> dict:
    if not spec.virtual or "generate" not in spec.virtual:
        raise ConfigError("simulate needs virtual.generate in the spec")
    ds = _generate_from(spec.virtual, spec.seed)
    manifest = write_dataset(ds, out)
    summary = ds.summary() | {"manifest": str(manifest)}
    print(
        f"simulated {summary['gyros']} gyros, {summary['recordings']} recordings, "
        f"{summary['samples']} samples per axis, {summary['hours']:.2f} h -> {manifest}"
    )
    return summary


def cmd_ingest(manifest_path: Path, out: Path | None) -> dict:
    ds = ingest_csv(manifest_path)
    gyros = []
    for gid in ds.gyro_ids:
        recs = ds.for_gyro(gid)
        gts = np.stack([r.samples.mean(axis=0) for r in recs])
        noise = np.mean([estimate_noise_std(r) for r in recs if r.n_samples > 1], axis=0)
        gyros.append(
            {
                "gyro_id": gid,
                "recordings": len(recs),
                "gt_bias_mean_dps": gts.mean(axis=0).tolist(),
                "gt_bias_std_dps": gts.std(axis=0).tolist(),
                "noise_std_dps": noise.tolist(),
            }
        )
    summary = ds.summary() | {"gyro_stats": gyros}
    print(f"ingested {summary['gyros']} gyros, {summary['recordings']} recordings, {summary['hours']:.2f} h")
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "ingest_summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return summary


def cmd_train(spec: ExperimentSpec, out: Path) -> list[Path]:
    spec.validate()
    train_set, test_set = resolve_datasets(spec)
    mode = channel_mode(spec)
    grouping = _grouping(spec, train_set)
    # check every window against the data before any training starts
    batches = {}
    for w in spec.window_s:
        x, y = stack_examples(make_windows(train_set, w, mode, grouping))
        make_windows(test_set, w, mode, _grouping(spec, test_set))
        batches[w] = (x, y)

    out.mkdir(parents=True, exist_ok=True)
    (out / FROZEN_SPEC).write_text(json.dumps(spec.frozen(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written = []
    for w, (x, y) in batches.items():
        net = NetworkConfig(in_channels=x.shape[1], window_len=x.shape[2], **spec.net)
        seed = derive_seed(spec.seed, "train", window_tag(w))
        tcfg = TrainConfig(**{**spec.train, "seed": seed})
        log.info("training %s: %d examples, %d channels, %d samples", window_tag(w), len(x), x.shape[1], x.shape[2])
        report = train(x, y, net, tcfg)
        model = BiasRegressor(net, report.params, float(w), train_set.sample_rate)
        ckpt = save_checkpoint(
            out / f"model_{window_tag(w)}.json",
            model,
            seed,
            meta={"protocol": spec.protocol, "train_examples": len(x), "train_gyros": train_set.gyro_ids},
        )
        (out / f"train_log_{window_tag(w)}.csv").write_text(report.log_csv(), encoding="utf-8")
        print(f"{window_tag(w)}: final train loss {report.losses[-1]:.6g} in {report.wall_time_s:.1f} s -> {ckpt}")
        written.append(ckpt)
    return written


def run_eval(
    spec: ExperimentSpec,
    models: dict[float, object],
    out: Path,
    test_set: Dataset | None = None,
    train_gyros: list[str] | None = None,
) -> list[ComparisonReport]:
    """Evaluate predictors keyed by window length; writes nothing until all succeed."""
    if test_set is None:
        _, test_set = resolve_datasets(spec)
    if len(test_set) == 0:
        raise InvalidArgumentError("no test recordings")
    mode = channel_mode(spec)
    grouping = _grouping(spec, test_set)
    curve = model_based_rmse_curve(test_set)
    reports, points = [], []
    for w in sorted(models):
        model = models[w]
        if getattr(model, "window_s", None) is not None and window_length(model.window_s, test_set.sample_rate) != window_length(w, test_set.sample_rate):
            raise InvalidArgumentError(f"model trained for {model.window_s} s evaluated at {w} s")
        nn = nn_rmse_at_window(model, test_set, w, mode, grouping)
        reports.append(improvement_report(w, nn, curve))
        points.append({"window_s": float(w), "nn_rmse_dps": nn})

    out.mkdir(parents=True, exist_ok=True)
    curve.to_csv(out / "model_based_curve.csv")
    (out / "nn_points.json").write_text(json.dumps(points, indent=2) + "\n", encoding="utf-8")
    meta = {"protocol": spec.protocol, "test_recordings": len(test_set), "test_gyros": test_set.gyro_ids}
    if train_gyros is not None:
        meta["train_gyros"] = list(train_gyros)
    write_report_json(out / "report.json", reports, meta)
    (out / "table.txt").write_text(render_table([(spec.protocol, _gyro_label(meta), r) for r in reports]), encoding="utf-8")
    return reports


def cmd_eval(spec: ExperimentSpec, checkpoints: list[Path], out: Path) -> list[ComparisonReport]:
    models, train_gyros = {}, set()
    for path in checkpoints:
        model, info = load_checkpoint(path)
        if info.get("window_s") is None:
            raise ConfigError(f"checkpoint {path} does not record its window length")
        models[float(info["window_s"])] = model
        train_gyros.update(info.get("meta", {}).get("train_gyros", []))
    reports = run_eval(spec, models, out, train_gyros=sorted(train_gyros) or None)
    print((out / "table.txt").read_text(encoding="utf-8"), end="")
    return reports


def _gyro_label(meta: dict) -> str:
    # gyroscope count of the training pool; 3 axes per unit
    if "train_gyros" in meta:
        return str(3 * len(meta["train_gyros"]))
    return "?"


def cmd_compare(run_dirs: list[Path], out: Path) -> str:
    rows, collected = [], []
    for d in run_dirs:
        path = d / "report.json"
        if not path.is_file():
            raise ConfigError(f"no report.json in {d}")
        doc = json.loads(path.read_text(encoding="utf-8"))
        method = doc["meta"].get("protocol", d.name)
        n_train = _gyro_label(doc["meta"])
        for r in doc["reports"]:
            rep = ComparisonReport(**r)
            rows.append((method, n_train, rep))
            collected.append({"run": d.name, "method": method, "train_gyros": n_train, **r})
    table = render_table(rows)
    out.mkdir(parents=True, exist_ok=True)
    (out / "compare.txt").write_text(table, encoding="utf-8")
    (out / "compare.json").write_text(json.dumps(collected, indent=2) + "\n", encoding="utf-8")
    print(table, end="")
    return table



# -- argument parsing ---------------------------------------------------------


def _load_spec(args) -> ExperimentSpec:
    if args.spec is None:
        run_spec = Path(args.out) / FROZEN_SPEC if getattr(args, "out", None) else None
        if run_spec is not None and run_spec.is_file():
            doc = json.loads(run_spec.read_text(encoding="utf-8"))
            spec = ExperimentSpec.from_frozen(doc, run_spec.parent)
        else:
            raise ConfigError("--spec is required")
    else:
        spec = ExperimentSpec.from_json(args.spec)
    if getattr(args, "seed", None) is not None:
        spec.seed = args.seed
    if getattr(args, "window_s", None):
        spec.window_s = list(args.window_s)
    return spec


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gyrocal", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--spec", type=Path)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", type=Path, required=out_required)
        sp.add_argument("--window-s", type=float, nargs="+", dest="window_s")

    common(sub.add_parser("simulate", help="generate a virtual dataset on disk"))
    sp = sub.add_parser("ingest", help="validate and summarize a recorded dataset")
    sp.add_argument("--manifest", type=Path)
    common(sp, out_required=False)
    common(sub.add_parser("train", help="train one model per window length"))
    sp = sub.add_parser("eval", help="compare trained models with the model-based baseline")
    common(sp)
    sp.add_argument("--checkpoint", type=Path, nargs="+", help="defaults to model_*.json in --run or --out")
    sp.add_argument("--run", type=Path, help="training run directory")
    sp = sub.add_parser("compare", help="tabulate reports of several eval runs")
    sp.add_argument("runs", type=Path, nargs="+")
    sp.add_argument("--out", type=Path, required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "simulate":
            cmd_simulate(_load_spec(args), args.out)
        elif args.command == "ingest":
            manifest = args.manifest
            if manifest is None:
                spec = _load_spec(args)
                if not spec.real or "manifest" not in spec.real:
                    raise ConfigError("ingest needs --manifest or a spec with real.manifest")
                manifest = spec.resolve(spec.real["manifest"])
            cmd_ingest(manifest, args.out)
        elif args.command == "train":
            cmd_train(_load_spec(args), args.out)
        elif args.command == "eval":
            if args.spec is None and args.run is not None:
                doc = json.loads((args.run / FROZEN_SPEC).read_text(encoding="utf-8"))
                spec = ExperimentSpec.from_frozen(doc, args.run)
                if args.seed is not None:
                    spec.seed = args.seed
            else:
                spec = _load_spec(args)
            ckpts = args.checkpoint or sorted((args.run or args.out).glob("model_*.json"))
            if not ckpts:
                raise ConfigError("no checkpoints given or found")
            cmd_eval(spec, ckpts, args.out)
        elif args.command == "compare":
            cmd_compare(args.runs, args.out)
    except (GyroCalError, OSError) as exc:
        print(f"gyrocal: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"gyrocal: internal error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
