"""Small strided convolutional stack standing in for a pretrained backbone."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .nn import BatchNorm, Conv2d, Module

BACKBONE_LR_MULT = 0.2


class ConfigError(ValueError):
    pass


@dataclass
class BackboneConfig:
    in_channels: int = 3
    stem_channels: int = 16
    stem_stride: int = 4
    # (channels, conv layers, stride) per stage; the first layer carries the stride
    stages: list[tuple[int, int, int]] = field(default_factory=lambda: [(32, 1, 2), (64, 1, 2)])
    image_size: int | None = 224

    @property
    def out_channels(self) -> int:
        return self.stages[-1][0] if self.stages else self.stem_channels

    @property
    def downsample(self) -> int:
        d = self.stem_stride
        for _, _, s in self.stages:
            d *= s
        return d

    def validate(self) -> None:
        if self.out_channels < 8:
            raise ConfigError(f"backbone output channels must be >= 8, got {self.out_channels}")
        if self.image_size is not None and self.image_size % self.downsample:
            raise ConfigError(
                f"image size {self.image_size} is not divisible by the downsample factor {self.downsample}"
            )


class Backbone(Module):
    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        s = cfg.stem_stride
        self.stem = Conv2d(cfg.in_channels, cfg.stem_channels, s, s, 0, rng, dtype)
        self.stem_bn = BatchNorm(cfg.stem_channels, dtype)
        convs, norms = [], []
        c_prev = cfg.stem_channels
        for c, n_layers, stride in cfg.stages:
            for i in range(n_layers):
                convs.append(Conv2d(c_prev, c, 3, stride if i == 0 else 1, 1, rng, dtype))
                norms.append(BatchNorm(c, dtype))
                c_prev = c
        self.convs = convs
        self.norms = norms

    def forward(self, x: T.Tensor) -> T.Tensor:
        D = self.cfg.downsample
        H, W = x.shape[-2:]
        if H % D or W % D:
            raise ConfigError(f"input extents {H}x{W} are not divisible by {D}")
        h = T.relu(self.stem_bn(self.stem(x)))
        for conv, bn in zip(self.convs, self.norms):
            h = T.relu(bn(conv(h)))
        return h


def parameter_groups(model: Module) -> dict[str, list[T.Tensor]]:
    """Split trainable parameters into the backbone group and everything else."""
    groups: dict[str, list[T.Tensor]] = {"backbone": [], "head": []}
    for name, p in model.named_parameters():
        groups["backbone" if name.startswith("backbone.") else "head"].append(p)
    return groups
