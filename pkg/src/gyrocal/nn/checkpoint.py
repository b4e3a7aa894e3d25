"""Single-file JSON checkpoints.

Tensors are stored as base64 of little-endian float64 in C order, so a saved
model reloads bit-exactly and two identical trainings produce identical files.
"""

from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

from gyrocal.exceptions import DatasetLoadError
from gyrocal.nn.network import PARAM_NAMES, BiasRegressor, NetworkConfig, check_params

FORMAT = "gyrocal-checkpoint/1"


def _encode(a: np.ndarray) -> dict:
    return {
        "shape": list(a.shape),
        "data": base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii"),
    }


def _decode(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(d["shape"])


def save_checkpoint(path, model: BiasRegressor, seed: int, meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "format": FORMAT,
        "config": model.config.to_dict(),
        "window_s": model.window_s,
        "sample_rate_hz": model.sample_rate,
        "seed": seed,
        "flatten_order": "filter-major",
        "meta": meta or {},
        "params": {name: _encode(model.params[name]) for name in PARAM_NAMES},
    }
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_checkpoint(path) -> tuple[BiasRegressor, dict]:
    """Return the model and the checkpoint document (minus tensors)."""
    path = Path(path)
    if not path.is_file():
        raise DatasetLoadError(path, "checkpoint not found")
    doc = json.loads(path.read_text(encoding="utf-8"))
    if doc.get("format") != FORMAT:
        raise DatasetLoadError(path, f"unsupported checkpoint format {doc.get('format')!r}")
    config = NetworkConfig.from_dict(doc["config"])
    params = {name: _decode(doc["params"][name]) for name in PARAM_NAMES}
    check_params(params, config)
    model = BiasRegressor(config, params, doc.get("window_s"), doc.get("sample_rate_hz"))
    info = {k: v for k, v in doc.items() if k != "params"}
    return model, info
