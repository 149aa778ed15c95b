"""Pairwise margin ranking over grade-separated pairs, and the total objective."""

from __future__ import annotations

import numpy as np

from . import tensor as T

MARGIN = 0.8
ALPHA_RANK = 2.0


def mine_pairs(labels, mixup_active: bool = False) -> np.ndarray:
    """All ordered index pairs (i, j) with y_i - y_j >= 1, as an (P, 2) array.

    Empty under Mixup, where targets are soft and the ordering is ill-defined.
    """
    y = np.asarray(labels, dtype=np.float64)
    if mixup_active:
        return np.empty((0, 2), dtype=np.int64)
    if not np.all(y == np.round(y)):
        raise ValueError("pair mining needs hard integer grades when Mixup is off")
    i, j = np.nonzero(y[:, None] - y[None, :] >= 1)
    return np.stack([i, j], axis=1).astype(np.int64)


def ranking_loss(scores: T.Tensor, pairs: np.ndarray, margin: float = MARGIN) -> T.Tensor:
    if len(pairs) == 0:
        return T.Tensor(np.zeros((), dtype=scores.dtype))
    diff = scores[pairs[:, 0]] - scores[pairs[:, 1]]
    return T.mean(T.relu(margin - diff))


def total_loss(evi: T.Tensor, rank: T.Tensor, alpha_rank: float = ALPHA_RANK) -> T.Tensor:
    return evi + rank * alpha_rank
