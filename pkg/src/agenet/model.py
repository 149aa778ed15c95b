"""End-to-end network: backbone -> SSF -> AGR -> DFR -> pool -> head, with ablation variants."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .agr import AGR
from .backbone import Backbone, BackboneConfig
from .dfr import DFR
from .evidential import COEHead, GaussianHead, HeadOutput
from .nn import Module
from .ssf import SSF

VARIANTS = ("full", "no_rank", "no_agr", "no_ssf", "no_dfr", "no_coe", "base")


@dataclass(frozen=True)
class ModelVariant:
    name: str = "full"
    ssf: bool = True
    agr: bool = True
    dfr: bool = True
    rank: bool = True
    coe: bool = True
    agr_k: int = 9
    agr_grid: int = 14


def build_variant(name: str, agr_k: int = 9, agr_grid: int = 14) -> ModelVariant:
    flags = {
        "full": {},
        "no_rank": {"rank": False},
        "no_agr": {"agr": False},
        "no_ssf": {"ssf": False},
        "no_dfr": {"dfr": False},
        "no_coe": {"coe": False},
        "base": {"ssf": False, "agr": False, "dfr": False, "rank": False},
    }
    if name not in flags:
        raise ValueError(f"unknown variant {name!r}; valid variants: {', '.join(VARIANTS)}")
    return replace(ModelVariant(name=name, agr_k=agr_k, agr_grid=agr_grid), **flags[name])


@dataclass
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    ssf_reduction: int = 8
    agr_channels_reduced: int | None = None
    dfr_kernel_jitter: float = 0.05


def _init_rng(seed: int, part: str) -> np.random.Generator:
    # one stream per submodule, so enabling/disabling a module leaves the others' init untouched
    return np.random.default_rng([seed, 1, zlib.crc32(part.encode())])


class AGENet(Module):
    def __init__(self, variant: ModelVariant, cfg: ModelConfig | None = None, seed: int = 0, dtype=np.float64):
        super().__init__()
        cfg = cfg or ModelConfig()
        self.variant, self.cfg, self.dtype = variant, cfg, np.dtype(dtype)
        C = cfg.backbone.out_channels
        self.backbone = Backbone(cfg.backbone, _init_rng(seed, "backbone"), dtype)
        self.ssf = SSF(C, _init_rng(seed, "ssf"), cfg.ssf_reduction, dtype) if variant.ssf else None
        self.agr = (
            AGR(C, _init_rng(seed, "agr"), variant.agr_k, variant.agr_grid, cfg.agr_channels_reduced, dtype)
            if variant.agr
            else None
        )
        self.dfr = DFR(C, _init_rng(seed, "dfr"), dtype, cfg.dfr_kernel_jitter) if variant.dfr else None
        head_cls = COEHead if variant.coe else GaussianHead
        self.head = head_cls(C, _init_rng(seed, "head"), dtype)

    def features(self, x: T.Tensor) -> list[T.Tensor]:
        """Feature maps F0..F3; a disabled module passes its input through."""
        maps = [self.backbone(x)]
        for module in (self.ssf, self.agr, self.dfr):
            maps.append(module(maps[-1]) if module is not None else maps[-1])
        return maps

    def forward(self, x, return_features: bool = False):
        if not isinstance(x, T.Tensor):
            x = T.Tensor(np.asarray(x, dtype=self.dtype))
        maps = self.features(x)
        out: HeadOutput = self.head(T.global_avg_pool(maps[-1]))
        return (out, maps) if return_features else out
