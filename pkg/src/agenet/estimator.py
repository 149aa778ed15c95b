"""scikit-learn estimator wrapper around the network and its training loop."""

from __future__ import annotations

import logging

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted

from .backbone import BackboneConfig
from .data import AugmentConfig
from .evidential import N_GRADES, grade_from_score
from .metrics import qwk
from .model import AGENet, ModelConfig, build_variant
from .training import TrainConfig, fit, predict

log = logging.getLogger(__name__)


def check_images(X, name: str = "X") -> np.ndarray:
    """Accept (n, H, W) or (n, C, H, W) finite images; returns a float array (n, C, H, W)."""
    X = np.asarray(X)
    if X.dtype.kind not in "fiu":
        raise ValueError(f"{name} must be numeric, got dtype {X.dtype}")
    if X.ndim == 3:
        X = X[:, None]
    if X.ndim != 4:
        raise ValueError(f"{name} must have shape (n, H, W) or (n, C, H, W), got {X.shape}")
    if len(X) == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite values")
    return X.astype(np.float32, copy=False)


def check_grades(y, n: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if len(y) != n:
        raise ValueError(f"y has {len(y)} entries for {n} images")
    if np.any(y < 0) or np.any(y > N_GRADES - 1) or not np.all(np.isfinite(y)):
        raise ValueError(f"grades must lie in [0, {N_GRADES - 1}]")
    return y


class AGENetRegressor(RegressorMixin, BaseEstimator):
    """Ordinal severity regressor with evidential uncertainty.

    ``predict`` returns continuous severity scores (flip-averaged when
    ``tta``); ``predict_grade`` rounds and clips them to 0..4 and
    ``predict_uncertainty`` returns the predictive variance. ``score`` is QWK.
    """

    def __init__(
        self,
        variant: str = "full",
        width: int = 64,
        epochs: int = 30,
        batch_size: int = 16,
        lr: float = 2e-3,
        backbone_lr_mult: float = 0.2,
        weight_decay: float = 1e-5,
        ema_decay: float = 0.999,
        mixup_p: float = 0.5,
        erasing_p: float = 0.25,
        agr_k: int = 9,
        agr_grid: int = 14,
        tta: bool = True,
        dtype: str = "float32",
        random_state: int = 0,
        verbose: int = 0,
    ):
        self.variant = variant
        self.width = width
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.backbone_lr_mult = backbone_lr_mult
        self.weight_decay = weight_decay
        self.ema_decay = ema_decay
        self.mixup_p = mixup_p
        self.erasing_p = erasing_p
        self.agr_k = agr_k
        self.agr_grid = agr_grid
        self.tta = tta
        self.dtype = dtype
        self.random_state = random_state
        self.verbose = verbose

    def _build(self, image_shape) -> AGENet:
        C, H, W = image_shape
        w = self.width
        bb = BackboneConfig(
            in_channels=3, stem_channels=max(4, w // 4), stages=[(max(8, w // 2), 1, 2), (w, 1, 2)], image_size=None
        )
        grid = min(self.agr_grid, H // bb.downsample, W // bb.downsample)
        variant = build_variant(self.variant, agr_k=min(self.agr_k, grid * grid - 1), agr_grid=grid)
        return AGENet(variant, ModelConfig(backbone=bb), seed=self.random_state, dtype=np.dtype(self.dtype))

    def fit(self, X, y, X_val=None, y_val=None):
        X = check_images(X)
        y = check_grades(y, len(X))
        if X_val is not None:
            X_val = check_images(X_val, "X_val")
            y_val = check_grades(y_val, len(X_val))
        cfg = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            backbone_lr_mult=self.backbone_lr_mult,
            weight_decay=self.weight_decay,
            ema_decay=self.ema_decay,
            mixup_p=self.mixup_p,
            augment=AugmentConfig(erasing_p=self.erasing_p),
            seed=self.random_state,
        )
        model = self._build(X.shape[1:])

        def report(state, rec):
            if self.verbose:
                log.info(" ".join(f"{k}={v:.4g}" for k, v in rec.items()))

        state = fit(model, X, y, cfg, X_val, y_val, on_epoch=report)
        self.model_ = model
        self.ema_model_ = state.ema.model
        self.history_ = state.history
        self.input_shape_ = X.shape[1:]
        return self

    def _check_input(self, X) -> np.ndarray:
        check_is_fitted(self, "ema_model_")
        X = check_images(X)
        if X.shape[2:] != self.input_shape_[1:]:
            raise ValueError(f"images are {X.shape[2:]}, model was fitted on {self.input_shape_[1:]}")
        return X

    def predict_dist(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Scores and predictive variances."""
        return predict(self.ema_model_, self._check_input(X), tta=self.tta)

    def predict(self, X) -> np.ndarray:
        return self.predict_dist(X)[0]

    def predict_uncertainty(self, X) -> np.ndarray:
        return self.predict_dist(X)[1]

    def predict_grade(self, X) -> np.ndarray:
        return grade_from_score(self.predict(X))

    def score(self, X, y, sample_weight=None) -> float:
        if sample_weight is not None:
            raise NotImplementedError("QWK scoring does not support sample weights")
        return qwk(np.round(np.asarray(y)).astype(int), self.predict_grade(X))


__all__ = ["AGENetRegressor", "NotFittedError", "check_images", "check_grades"]
