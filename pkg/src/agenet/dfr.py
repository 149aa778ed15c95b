"""Differential refinement: |depthwise(F) - F| mixed pointwise, then SiLU(R + F)."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .nn import BatchNorm, Conv1x1, Module, Parameter

IDENTITY_KERNEL = np.array([[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]])


class DFR(Module):
    def __init__(self, channels: int, rng: np.random.Generator, dtype=np.float64, kernel_jitter: float = 0.05):
        super().__init__()
        # an exact identity kernel makes E == 0, where |.| has zero subgradient and never trains
        k = np.tile(IDENTITY_KERNEL, (channels, 1, 1)) + kernel_jitter * rng.standard_normal((channels, 3, 3))
        self.kernels = Parameter(k, dtype)
        self.mix = Conv1x1(channels, channels, rng, dtype)
        self.mix_bn = BatchNorm(channels, dtype)

    def differential_map(self, F: T.Tensor) -> T.Tensor:
        return T.tabs(T.dwconv3x3(F, self.kernels) - F)

    def forward(self, F: T.Tensor) -> T.Tensor:
        R = self.mix_bn(self.mix(self.differential_map(F)))
        return T.silu(R + F)
