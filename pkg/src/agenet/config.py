"""Run configuration: nested YAML sections with defaults, dotted overrides and a stable hash."""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import numpy as np
import yaml

from .backbone import BackboneConfig
from .data import AugmentConfig, SynthSpec
from .model import AGENet, ModelConfig, ModelVariant, build_variant
from .training import TrainConfig

DEFAULTS: dict = {
    "backbone": {
        "in_channels": 3,
        "stem_channels": 16,
        "stem_stride": 4,
        "stages": [[32, 1, 2], [64, 1, 2]],
        "image_size": 224,
    },
    "ssf": {"enabled": True, "reduction": 8},
    "agr": {"enabled": True, "k": 9, "grid": 14, "channels_reduced": 16},
    "dfr": {"enabled": True, "kernel_jitter": 0.05},
    "head": {"type": "coe"},
    "rank": {"enabled": True, "alpha": 2.0, "margin": 0.8},
    "train": {
        "epochs": 30,
        "batch_size": 16,
        # from-scratch desk backbone; the pretrained recipe's 1e-5 is far too small here
        "lr": 2e-3,
        "backbone_lr_mult": 0.2,
        "weight_decay": 1e-5,
        "ema_decay": 0.999,
        "ema_warmup": True,
        "mixup_p": 0.5,
        "mixup_alpha": 0.2,
        "affine_p": 0.5,
        "jitter_p": 0.5,
        "erasing_p": 0.25,
        "seeds": [0, 1, 2],
        "dtype": "float32",
        "tta": True,
    },
    "data": {
        "root": None,
        "split": [0.8, 0.1, 0.1],
        "split_seed": 0,
        "synth": {"size": 224, "noise": 0.02, "label_noise": 0.0},
    },
}

# large-scale pretrained recipe (448 px, 300 epochs), kept for reference; not a desk-scale target
REFERENCE_PRESET: dict = {
    "backbone": {"image_size": 448},
    "train": {"epochs": 300, "lr": 1e-5, "backbone_lr_mult": 0.2, "weight_decay": 1e-5},
}


class ConfigError(ValueError):
    pass


def deep_merge(base: dict, update: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in (update or {}).items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Defaults, then the YAML file, then dotted-key overrides (flag > file > default)."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        with open(path) as fh:
            loaded = yaml.safe_load(fh) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
        cfg = deep_merge(cfg, loaded)
    for dotted, val in (overrides or {}).items():
        if val is None:
            continue
        node = cfg
        *parents, leaf = dotted.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = val
    return cfg


def dump_config(cfg: dict, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(cfg, fh, sort_keys=True)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest()[:16]


def backbone_config(cfg: dict) -> BackboneConfig:
    b = cfg["backbone"]
    return BackboneConfig(
        in_channels=int(b["in_channels"]),
        stem_channels=int(b["stem_channels"]),
        stem_stride=int(b["stem_stride"]),
        stages=[tuple(int(v) for v in s) for s in b["stages"]],
        image_size=b.get("image_size"),
    )


def model_config(cfg: dict) -> ModelConfig:
    return ModelConfig(
        backbone=backbone_config(cfg),
        ssf_reduction=int(cfg["ssf"]["reduction"]),
        agr_channels_reduced=cfg["agr"].get("channels_reduced"),
        dfr_kernel_jitter=float(cfg["dfr"].get("kernel_jitter", 0.05)),
    )


def resolve_variant(cfg: dict, name: str | None = None) -> ModelVariant:
    """A named variant wins over the ``*.enabled`` keys; otherwise the keys define the flags."""
    k, grid = int(cfg["agr"]["k"]), int(cfg["agr"]["grid"])
    if name is not None:
        return build_variant(name, agr_k=k, agr_grid=grid)
    head = cfg["head"]["type"]
    if head not in ("coe", "heteroscedastic"):
        raise ConfigError(f"head.type must be coe or heteroscedastic, got {head!r}")
    flags = {
        "ssf": bool(cfg["ssf"]["enabled"]),
        "agr": bool(cfg["agr"]["enabled"]),
        "dfr": bool(cfg["dfr"]["enabled"]),
        "rank": bool(cfg["rank"]["enabled"]),
        "coe": head == "coe",
    }
    for named in ("full", "no_rank", "no_agr", "no_ssf", "no_dfr", "no_coe", "base"):
        v = build_variant(named, k, grid)
        if all(getattr(v, f) == flags[f] for f in flags):
            return v
    return ModelVariant(name="custom", agr_k=k, agr_grid=grid, **flags)


def variant_to_dict(v: ModelVariant) -> dict:
    return {f: getattr(v, f) for f in ("name", "ssf", "agr", "dfr", "rank", "coe", "agr_k", "agr_grid")}


def train_config(cfg: dict, seed: int) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(
        epochs=int(t["epochs"]),
        batch_size=int(t["batch_size"]),
        lr=float(t["lr"]),
        backbone_lr_mult=float(t["backbone_lr_mult"]),
        weight_decay=float(t["weight_decay"]),
        ema_decay=float(t["ema_decay"]),
        ema_warmup=bool(t.get("ema_warmup", True)),
        mixup_p=float(t["mixup_p"]),
        mixup_alpha=float(t.get("mixup_alpha", 0.2)),
        alpha_rank=float(cfg["rank"]["alpha"]),
        margin=float(cfg["rank"]["margin"]),
        augment=AugmentConfig(
            affine_p=float(t.get("affine_p", 0.5)),
            jitter_p=float(t.get("jitter_p", 0.5)),
            erasing_p=float(t["erasing_p"]),
        ),
        seed=int(seed),
    )


def synth_spec(cfg: dict, seed: int) -> SynthSpec:
    s = dict(cfg["data"].get("synth", {}))
    size = int(s.pop("size", 224))
    fields = {k: v for k, v in s.items() if k in SynthSpec.__dataclass_fields__ and k != "seed"}
    return SynthSpec.for_size(size, seed=seed, **fields)


def build_model(cfg: dict, variant: ModelVariant, seed: int) -> AGENet:
    dtype = np.dtype(cfg["train"].get("dtype", "float32"))
    return AGENet(variant, model_config(cfg), seed=seed, dtype=dtype)
