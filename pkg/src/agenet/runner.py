"""Run plumbing shared by the CLI commands: manifests, dataset loading, train and evaluate."""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import load_eval_model, save_checkpoint
from .config import build_model, config_hash, dump_config, resolve_variant, train_config
from .data import LabeledSample, load_directory_dataset, split
from .evidential import grade_from_score
from .metrics import all_metrics, binned_uncertainty, risk_coverage, uncertainty_correlation
from .model import AGENet, ModelVariant
from .training import TrainState, fit, predict

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "AGENET_OUTPUT_ROOT"
LOG_FIELDS = ("epoch", "lr", "L_evi", "L_rank", "L_total", "val_qwk", "val_mse")
PREDICTION_FIELDS = ("id", "true", "gamma", "variance", "grade", "abs_error")
REPORT_NOTES = {
    "macro_average": "F1 and recall are macro-averaged over grades present in the ground truth",
    "grading": "scores rounded half away from zero, then clipped to 0..4",
}


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def source_hash() -> str:
    """sha256 over this package's source files, so a manifest pins the code that produced it."""
    h = hashlib.sha256()
    pkg = Path(__file__).parent
    for path in sorted(pkg.glob("*.py")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()[:16]


@dataclass
class RunManifest:
    command: str
    config: dict
    seeds: list[int]
    variant: str | None
    output_dir: str
    source_hash: str = field(default_factory=source_hash)
    start_time: str = field(default_factory=lambda: dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"))
    config_hash: str = ""
    argv: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.config_hash = self.config_hash or config_hash(self.config)

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True, default=str)
            fh.write("\n")
        return path


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def to_arrays(samples: list[LabeledSample]) -> tuple[np.ndarray, np.ndarray, list[str]]:
    if not samples:
        return np.zeros((0, 3, 1, 1), np.float32), np.zeros(0), []
    X = np.stack([s.image for s in samples]).astype(np.float32)
    y = np.array([s.label for s in samples], dtype=np.float64)
    return X, y, [s.id for s in samples]


def load_splits(cfg: dict, root) -> dict[str, tuple]:
    """train / val / test arrays from a ``root/<grade>/`` directory and the configured split."""
    samples = load_directory_dataset(root)
    if not samples:
        raise ValueError(f"no images found under {root}")
    parts = split(samples, cfg["data"]["split"], cfg["data"]["split_seed"])
    names = ("train", "val", "test")[: len(parts)]
    return {name: to_arrays(p) for name, p in zip(names, parts)}


def evaluate_arrays(model: AGENet, X: np.ndarray, y: np.ndarray, ids: list[str], tta: bool) -> tuple[dict, list[dict]]:
    """Metrics document plus per-sample rows."""
    gamma, var = predict(model, X, tta=tta)
    grades = grade_from_score(gamma)
    abs_err = np.abs(grades - y)
    rows = [
        {"id": i, "true": int(t), "gamma": float(g), "variance": float(v), "grade": int(k), "abs_error": float(e)}
        for i, t, g, v, k, e in zip(ids, y, gamma, var, grades, abs_err)
    ]
    doc = {
        "n": int(len(y)),
        "metrics": all_metrics(y, gamma),
        "risk_coverage": risk_coverage(var, abs_err),
        "binned_uncertainty": binned_uncertainty(var, abs_err),
        "correlation": uncertainty_correlation(var, abs_err) if len(y) >= 3 else {"spearman": None, "pearson": None},
        "tta": bool(tta),
        "notes": dict(REPORT_NOTES),
    }
    if tta:
        doc["notes"]["tta"] = "scores and predictive variances are both averaged over the image and its horizontal flip"
    return doc, rows


def write_predictions(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=PREDICTION_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({**r, "gamma": f"{r['gamma']:.6f}", "variance": f"{r['variance']:.6f}", "abs_error": f"{r['abs_error']:g}"})


def format_log_line(rec: dict) -> str:
    parts = []
    for k in LOG_FIELDS:
        v = rec.get(k)
        if v is None:
            parts.append(f"{k}=nan")
        elif k == "epoch":
            parts.append(f"{k}={int(v)}")
        else:
            parts.append(f"{k}={v:.6e}")
    return " ".join(parts)


def parse_log(path) -> list[dict]:
    out = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        rec = dict(kv.split("=", 1) for kv in line.split())
        out.append({k: (int(v) if k == "epoch" else float(v)) for k, v in rec.items()})
    return out


def _better(rec: dict, best: dict | None) -> bool:
    if best is None:
        return True
    q, b = rec.get("val_qwk"), best.get("val_qwk")
    if q is None or b is None or math.isnan(q) or math.isnan(b):
        return True  # no validation data: keep the latest
    return (q, -rec["val_mse"]) > (b, -best["val_mse"])


def train_run(cfg: dict, variant: ModelVariant, seed: int, out, splits: dict) -> dict:
    """Train one (variant, seed), keeping the best-validation EMA checkpoint; returns the final metrics."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config.yaml")
    X, y, _ = splits["train"]
    if len(X) == 0:
        raise ValueError("training split is empty")
    X_val, y_val, _ = splits.get("val", (None, None, None))
    if X_val is not None and len(X_val) == 0:
        X_val = y_val = None
    model = build_model(cfg, variant, seed)
    best: dict | None = None
    ckpt = out / "best.ckpt"

    def on_epoch(state: TrainState, rec: dict) -> None:
        nonlocal best
        with open(out / "train.log", "a") as fh:
            fh.write(format_log_line(rec) + "\n")
        if _better(rec, best):
            best = dict(rec)
            save_checkpoint(ckpt, state, cfg, seed)

    fit(model, X, y, train_config(cfg, seed), X_val, y_val, on_epoch=on_epoch)
    ema_model, _ = load_eval_model(ckpt)
    tta = bool(cfg["train"].get("tta", True))
    result = {"variant": variant.name, "seed": seed, "best_epoch": best["epoch"], "best_val": {k: best.get(k) for k in ("val_qwk", "val_mse")}}
    X_test, y_test, ids = splits.get("test", (np.zeros(0), np.zeros(0), []))
    if len(X_test):
        doc, rows = evaluate_arrays(ema_model, X_test, y_test, ids, tta)
        write_predictions(out / "test_predictions.csv", rows)
        result["test"] = doc
    write_json(out / "metrics.json", result)
    return result


def eval_run(checkpoint, root, tta: bool, out) -> dict:
    model, manifest = load_eval_model(checkpoint)
    samples = load_directory_dataset(root)
    if not samples:
        raise ValueError(f"no images found under {root}")
    X, y, ids = to_arrays(samples)
    doc, rows = evaluate_arrays(model, X, y, ids, tta)
    doc["checkpoint"] = {"variant": manifest["variant"]["name"], "epoch": manifest["epoch"], "config_hash": manifest["config_hash"]}
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_predictions(out / "predictions.csv", rows)
    write_json(out / "metrics.json", doc)
    return doc


__all__ = [
    "RunManifest",
    "eval_run",
    "evaluate_arrays",
    "format_log_line",
    "load_splits",
    "output_root",
    "parse_log",
    "resolve_variant",
    "train_run",
]
