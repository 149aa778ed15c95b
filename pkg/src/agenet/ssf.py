"""Spectral-spatial fusion: per-channel complex spectrum scaling plus a sigmoid gate."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .nn import BatchNorm, Conv1x1, Module, Parameter


def spectral_modulate(F: T.Tensor, w_real: T.Tensor, w_imag: T.Tensor) -> T.Tensor:
    H, W = F.shape[-2:]
    return T.irfft2(T.complex_scale(T.rfft2(F), w_real, w_imag), H, W)


class SSF(Module):
    def __init__(self, channels: int, rng: np.random.Generator, reduction: int = 8, dtype=np.float64):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.w_real = Parameter(np.ones(channels), dtype)
        self.w_imag = Parameter(np.zeros(channels), dtype)
        self.squeeze = Conv1x1(channels, hidden, rng, dtype)
        self.squeeze_bn = BatchNorm(hidden, dtype)
        self.expand = Conv1x1(hidden, channels, rng, dtype)

    def spectral(self, F: T.Tensor) -> T.Tensor:
        return spectral_modulate(F, self.w_real, self.w_imag)

    def gate(self, F: T.Tensor) -> T.Tensor:
        return T.sigmoid(self.expand(T.relu(self.squeeze_bn(self.squeeze(F)))))

    def forward(self, F: T.Tensor) -> T.Tensor:
        return F + self.spectral(F) + F * self.gate(F)
