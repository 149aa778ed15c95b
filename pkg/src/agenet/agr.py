"""Graph reasoning over pooled tokens: kNN in feature space, EdgeConv, gated residual."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .backbone import ConfigError
from .nn import BatchNorm, Conv1x1, Module

AGR_GRIDS = (10, 14, 16)


def build_knn(X: np.ndarray, k: int) -> np.ndarray:
    """Neighbor table for tokens ``X`` of shape (C, N) or (B, C, N).

    Rows hold the k nearest other tokens by Euclidean distance; equal
    distances resolve to the lower token index.
    """
    batched = X.ndim == 3
    Xb = X if batched else X[None]
    N = Xb.shape[-1]
    if not 1 <= k < N:
        raise ConfigError(f"k={k} must satisfy 1 <= k < N={N}")
    pts = np.swapaxes(Xb, 1, 2)
    d2 = ((pts[:, :, None, :] - pts[:, None, :, :]) ** 2).sum(-1)
    idx = np.arange(N)
    d2[:, idx, idx] = np.inf
    nbrs = np.argsort(d2, axis=-1, kind="stable")[..., :k]
    return nbrs if batched else nbrs[0]


def edge_features(X: T.Tensor, nbrs: np.ndarray) -> T.Tensor:
    """Stack [x_i, x_j - x_i] for every edge; (B, C, N) -> (B, 2C, N, k)."""
    B, C, N = X.shape
    k = nbrs.shape[-1]
    pts = X.transpose(0, 2, 1)
    xj = pts[np.arange(B)[:, None, None], nbrs]
    xi = T.broadcast_to(pts.reshape(B, N, 1, C), (B, N, k, C))
    return T.concat([xi, xj - xi], axis=-1).transpose(0, 3, 1, 2)


class AGR(Module):
    def __init__(
        self,
        channels: int,
        rng: np.random.Generator,
        k: int = 9,
        grid: int = 14,
        channels_reduced: int | None = None,
        dtype=np.float64,
    ):
        super().__init__()
        c_r = channels_reduced or max(1, channels // 4)
        if c_r >= channels:
            raise ConfigError(f"reduced channels {c_r} must be below {channels}")
        self.k, self.grid, self.c_r = k, grid, c_r
        self.reduce = Conv1x1(channels, c_r, rng, dtype)
        self.edge = Conv1x1(2 * c_r, c_r, rng, dtype)
        self.edge_bn = BatchNorm(c_r, dtype)
        self.expand = Conv1x1(c_r, channels, rng, dtype)
        self.gate_bn = BatchNorm(channels, dtype)

    def tokenize(self, F: T.Tensor) -> T.Tensor:
        H, W = F.shape[-2:]
        if self.grid > min(H, W):
            raise ConfigError(f"token grid {self.grid} exceeds feature extents {H}x{W}")
        Fp = T.adaptive_avg_pool(self.reduce(F), self.grid, self.grid)
        return Fp.reshape(F.shape[0], self.c_r, self.grid * self.grid)

    def edgeconv(self, X: T.Tensor, nbrs: np.ndarray) -> T.Tensor:
        e = T.leaky_relu(self.edge_bn(self.edge(edge_features(X, nbrs))), 0.2)
        return T.tmax(e, axis=-1)

    def gate(self, Xp: T.Tensor, H: int, W: int) -> T.Tensor:
        B, C_e, _ = Xp.shape
        up = T.upsample_nearest(Xp.reshape(B, C_e, self.grid, self.grid), H, W)
        return T.sigmoid(self.gate_bn(self.expand(up)))

    def forward(self, F: T.Tensor) -> T.Tensor:
        H, W = F.shape[-2:]
        X = self.tokenize(F)
        nbrs = build_knn(X.data, self.k)
        G = self.gate(self.edgeconv(X, nbrs), H, W)
        return F * G + F
