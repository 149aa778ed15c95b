"""Checkpoint file: magic line, JSON manifest, then little-endian float32 blobs.

Layout::

    b"AGENET1\\n"
    uint64 (little-endian) manifest length in bytes
    manifest (UTF-8 JSON): version, epoch, step, config, config_hash, variant,
                           optimizer_t, entries[{name, shape, dtype, offset, nbytes}]
    blob: entries back to back, offsets relative to the blob start

Entry names are prefixed ``params/``, ``buffers/``, ``ema/`` and ``optim/``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .config import build_model, config_hash, variant_to_dict
from .model import AGENet, ModelVariant
from .training import EMA, TrainState, init_state
from .config import train_config

MAGIC = b"AGENET1\n"
VERSION = "AGENET1"


class CheckpointError(RuntimeError):
    pass


def _entries(state: TrainState) -> dict[str, np.ndarray]:
    model = state.model
    out = {f"params/{k}": p.data for k, p in model.named_parameters()}
    out.update({f"buffers/{k}": b for k, b in model.named_buffers()})
    out.update({f"ema/{k}": v for k, v in state.ema.model.state_dict().items()})
    names = {id(p): k for k, p in model.named_parameters()}
    out.update({f"optim/{k}": v for k, v in state.optimizer.state(names).items()})
    return out


def save_checkpoint(path, state: TrainState, config: dict, seed: int) -> None:
    entries = _entries(state)
    manifest = {
        "version": VERSION,
        "epoch": state.epoch,
        "step": state.step,
        "seed": seed,
        "optimizer_t": state.optimizer.t,
        "ema_updates": state.ema.updates,
        "config": config,
        "config_hash": config_hash(config),
        "variant": variant_to_dict(state.model.variant),
        "entries": [],
    }
    blobs, offset = [], 0
    for name, arr in entries.items():
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        manifest["entries"].append(
            {"name": name, "shape": list(arr.shape), "dtype": "float32", "offset": offset, "nbytes": len(data)}
        )
        blobs.append(data)
        offset += len(data)
    head = json.dumps(manifest, sort_keys=True).encode()
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for b in blobs:
            fh.write(b)
    tmp.replace(path)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if not raw.startswith(MAGIC):
        raise CheckpointError(f"{path}: not an {VERSION} checkpoint (bad magic)")
    start = len(MAGIC) + 8
    if len(raw) < start:
        raise CheckpointError(f"{path}: truncated header")
    (n,) = struct.unpack("<Q", raw[len(MAGIC) : start])
    try:
        manifest = json.loads(raw[start : start + n])
    except ValueError as exc:
        raise CheckpointError(f"{path}: unreadable manifest: {exc}") from exc
    if manifest.get("version") != VERSION:
        raise CheckpointError(f"{path}: version {manifest.get('version')!r} != {VERSION}")
    blob = memoryview(raw)[start + n :]
    arrays = {}
    for e in manifest["entries"]:
        if e["dtype"] != "float32":
            raise CheckpointError(f"{path}: unsupported scalar type {e['dtype']}")
        buf = blob[e["offset"] : e["offset"] + e["nbytes"]]
        if len(buf) != e["nbytes"] or e["nbytes"] != 4 * int(np.prod(e["shape"])):
            raise CheckpointError(f"{path}: entry {e['name']} is truncated or mis-sized")
        arrays[e["name"]] = np.frombuffer(buf, dtype="<f4").reshape(e["shape"]).copy()
    return manifest, arrays


def _section(arrays: dict[str, np.ndarray], prefix: str) -> dict[str, np.ndarray]:
    return {k[len(prefix) :]: v for k, v in arrays.items() if k.startswith(prefix)}


def load_checkpoint(path) -> tuple[TrainState, dict]:
    """Rebuild the live model, EMA model and optimizer state; also returns the manifest."""
    manifest, arrays = read_checkpoint(path)
    cfg = manifest["config"]
    variant = ModelVariant(**manifest["variant"])
    model: AGENet = build_model(cfg, variant, manifest["seed"])
    live = _section(arrays, "params/")
    live.update(_section(arrays, "buffers/"))
    model.load_state_dict(live)
    state = init_state(model, train_config(cfg, manifest["seed"]))
    state.ema = EMA(model, state.cfg.ema_decay, state.cfg.ema_warmup)
    state.ema.model.load_state_dict(_section(arrays, "ema/"))
    state.ema.updates = manifest["ema_updates"]
    names = {id(p): k for k, p in model.named_parameters()}
    state.optimizer.load_state(_section(arrays, "optim/"), names, manifest["optimizer_t"])
    state.epoch, state.step = manifest["epoch"], manifest["step"]
    return state, manifest


def load_eval_model(path) -> tuple[AGENet, dict]:
    """The EMA model in eval mode plus the manifest."""
    state, manifest = load_checkpoint(path)
    state.ema.model.eval()
    return state.ema.model, manifest
