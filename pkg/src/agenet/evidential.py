"""Evidential regression head: Normal-Inverse-Gamma parameters, loss, and grading."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Linear, Module

EPS = 1e-6
N_GRADES = 5
WARMUP_COEF = 0.03
WARMUP_EPOCHS = 20


@dataclass
class HeadOutput:
    """Per-sample head outputs; ``nu/alpha/beta`` are None for the Gaussian head."""

    gamma: T.Tensor
    nu: T.Tensor | None = None
    alpha: T.Tensor | None = None
    beta: T.Tensor | None = None
    log_var: T.Tensor | None = None

    @property
    def evidential(self) -> bool:
        return self.nu is not None

    def variance(self) -> np.ndarray:
        if self.evidential:
            return predictive_variance(self.nu.data, self.alpha.data, self.beta.data)
        return np.exp(self.log_var.data)


def nig_from_raw(raw: T.Tensor) -> HeadOutput:
    """Map raw (B, 4) outputs to (gamma, nu, alpha, beta) with positivity constraints."""
    gamma = raw[:, 0]
    nu = T.softplus(raw[:, 1]) + EPS
    alpha = T.softplus(raw[:, 2]) + (1.0 + EPS)
    beta = T.softplus(raw[:, 3]) + EPS
    return HeadOutput(gamma, nu, alpha, beta)


class COEHead(Module):
    def __init__(self, channels: int, rng: np.random.Generator, dtype=np.float64, gamma_bias: float = 2.0):
        super().__init__()
        self.fc = Linear(channels, 4, rng, dtype, scale=0.01)
        self.fc.bias.data[0] = gamma_bias

    def forward(self, z: T.Tensor) -> HeadOutput:
        return nig_from_raw(self.fc(z))


class GaussianHead(Module):
    """Heteroscedastic baseline: mean and log-variance with a Gaussian likelihood."""

    def __init__(self, channels: int, rng: np.random.Generator, dtype=np.float64, gamma_bias: float = 2.0):
        super().__init__()
        self.fc = Linear(channels, 2, rng, dtype, scale=0.01)
        self.fc.bias.data[0] = gamma_bias

    def forward(self, z: T.Tensor) -> HeadOutput:
        raw = self.fc(z)
        return HeadOutput(raw[:, 0], log_var=raw[:, 1])


def predictive_variance(nu, alpha, beta):
    """Student-t predictive variance beta (1 + nu) / (nu (alpha - 1)); works on arrays or tensors."""
    return beta * (1.0 + nu) / (nu * (alpha - 1.0))


def nig_nll(out: HeadOutput, y, reduce: bool = True) -> T.Tensor:
    y = T.Tensor(np.asarray(y, dtype=out.gamma.dtype))
    nu, alpha, beta = out.nu, out.alpha, out.beta
    omega = 2.0 * beta * (1.0 + nu)
    resid2 = (y - out.gamma) ** 2
    nll = (
        0.5 * T.log(math.pi / nu)
        - alpha * T.log(omega)
        + (alpha + 0.5) * T.log(resid2 * nu + omega)
        + T.lgamma(alpha)
        - T.lgamma(alpha + 0.5)
    )
    return T.mean(nll) if reduce else nll


def gaussian_nll(out: HeadOutput, y, reduce: bool = True) -> T.Tensor:
    y = T.Tensor(np.asarray(y, dtype=out.gamma.dtype))
    nll = 0.5 * (out.log_var + (y - out.gamma) ** 2 * T.exp(-out.log_var) + math.log(2 * math.pi))
    return T.mean(nll) if reduce else nll


def warmup_lambda(t: float, coef: float = WARMUP_COEF, ramp: int = WARMUP_EPOCHS) -> float:
    return coef * min(1.0, t / ramp)


def evidence_regularizer(out: HeadOutput, y, t: float, reduce: bool = True) -> T.Tensor:
    y = T.Tensor(np.asarray(y, dtype=out.gamma.dtype))
    reg = T.tabs(y - out.gamma) * (2.0 * out.nu + out.alpha) * warmup_lambda(t)
    return T.mean(reg) if reduce else reg


def evidential_loss(out: HeadOutput, y, t: float) -> T.Tensor:
    """Training loss of the head; the Gaussian head has no evidence term."""
    if not out.evidential:
        return gaussian_nll(out, y)
    return nig_nll(out, y) + evidence_regularizer(out, y, t)


def grade_from_score(gamma) -> np.ndarray:
    """Round half away from zero, then clip to 0..4."""
    g = np.asarray(gamma, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise ValueError("cannot grade non-finite scores")
    rounded = np.sign(g) * np.floor(np.abs(g) + 0.5)
    return np.clip(rounded, 0, N_GRADES - 1).astype(np.int64)
