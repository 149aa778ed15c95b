"""Optimization loop: AdamW with per-group learning rates, cosine schedule, EMA, Mixup."""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import tensor as T
from .backbone import BACKBONE_LR_MULT, parameter_groups
from .data import AugmentConfig, augment
from .evidential import HeadOutput, evidential_loss, grade_from_score
from .metrics import basic_metrics, qwk
from .model import AGENet
from .ordinal import ALPHA_RANK, MARGIN, mine_pairs, ranking_loss, total_loss

log = logging.getLogger(__name__)

# named random substreams, all derived from the one user seed
STREAM_DATA, STREAM_INIT, STREAM_AUGMENT, STREAM_BOOTSTRAP = 0, 1, 2, 3


def substream(seed: int, stream: int, *extra: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream, *extra])


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    lr: float = 2e-3
    backbone_lr_mult: float = BACKBONE_LR_MULT
    weight_decay: float = 1e-5
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    ema_decay: float = 0.999
    ema_warmup: bool = True
    mixup_p: float = 0.5
    mixup_alpha: float = 0.2
    alpha_rank: float = ALPHA_RANK
    margin: float = MARGIN
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    seed: int = 0

    def validate(self) -> None:
        for name in ("mixup_p",):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        for name in ("affine_p", "jitter_p", "erasing_p"):
            if not 0.0 <= getattr(self.augment, name) <= 1.0:
                raise ValueError(f"augment.{name} must lie in [0, 1]")
        if not 0.0 < self.ema_decay < 1.0:
            raise ValueError("ema_decay must lie in (0, 1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")


def cosine_lr(epoch: float, total: float, base: float) -> float:
    if total <= 0:
        return base
    e = min(max(epoch, 0.0), total)
    # (1 + cos(pi u)) / 2 written via sin so u = 0, 1/2, 1 give base, base/2, 0 exactly
    return max(0.0, base * (1.0 - math.sin(math.pi * (e / total - 0.5))) / 2.0)


class AdamW:
    """Adaptive moments with decoupled weight decay; one LR multiplier per group."""

    def __init__(self, groups: dict[str, list[T.Tensor]], lr_mult: dict[str, float], betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-5):
        self.groups = groups
        self.lr_mult = lr_mult
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {id(p): np.zeros_like(p.data) for ps in groups.values() for p in ps}
        self.v = {id(p): np.zeros_like(p.data) for ps in groups.values() for p in ps}

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for name, params in self.groups.items():
            glr = lr * self.lr_mult.get(name, 1.0)
            for p in params:
                if p.grad is None:
                    continue
                m, v = self.m[id(p)], self.v[id(p)]
                m *= self.b1
                m += (1 - self.b1) * p.grad
                v *= self.b2
                v += (1 - self.b2) * p.grad * p.grad
                p.data *= 1 - glr * self.weight_decay
                p.data -= (glr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)

    def state(self, names: dict[int, str]) -> dict[str, np.ndarray]:
        out = {}
        for key, store in (("m", self.m), ("v", self.v)):
            for pid, arr in store.items():
                out[f"{key}.{names[pid]}"] = arr
        return out

    def load_state(self, state: dict[str, np.ndarray], names: dict[int, str], t: int) -> None:
        self.t = t
        for key, store in (("m", self.m), ("v", self.v)):
            for pid in store:
                store[pid][...] = state[f"{key}.{names[pid]}"]


def ema_update(ema: np.ndarray, param: np.ndarray, decay: float) -> np.ndarray:
    """In-place convex combination ema <- decay * ema + (1 - decay) * param."""
    ema *= decay
    ema += (1.0 - decay) * param
    return ema


class EMA:
    """Shadow copy of the model whose parameters track an exponential moving average.

    With ``warmup`` the effective decay at update n is min(decay, (1+n)/(10+n)),
    so the average forgets the random initialization on short runs.
    """

    def __init__(self, model: AGENet, decay: float = 0.999, warmup: bool = True):
        self.decay, self.warmup = decay, warmup
        self.model = copy.deepcopy(model)
        self.model.eval()
        self.updates = 0

    def effective_decay(self) -> float:
        if not self.warmup:
            return self.decay
        return min(self.decay, (1 + self.updates) / (10 + self.updates))

    def update(self, model: AGENet) -> None:
        d = self.effective_decay()
        for (_, ep), (_, p) in zip(self.model.named_parameters(), model.named_parameters()):
            ema_update(ep.data, p.data, d)
        for (_, eb), (_, b) in zip(self.model.named_buffers(), model.named_buffers()):
            eb[...] = b
        self.updates += 1


def mixup(x: np.ndarray, y: np.ndarray, rng: np.random.Generator, alpha: float = 0.2):
    lam = float(rng.beta(alpha, alpha))
    perm = rng.permutation(len(x))
    return (lam * x + (1 - lam) * x[perm]).astype(x.dtype), lam * y + (1 - lam) * y[perm], lam


def to_model_input(x: np.ndarray, in_channels: int, dtype) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim == 3:
        x = x[:, None]
    if x.shape[1] == 1 and in_channels != 1:
        x = np.repeat(x, in_channels, axis=1)
    return x.astype(dtype, copy=False)


@dataclass
class StepResult:
    L_evi: float
    L_rank: float
    L_total: float
    mixup: bool
    skipped: bool = False


@dataclass
class TrainState:
    model: AGENet
    ema: EMA
    optimizer: AdamW
    cfg: TrainConfig
    epoch: int = 0
    step: int = 0
    skipped: int = 0
    history: list[dict] = field(default_factory=list)


def init_state(model: AGENet, cfg: TrainConfig) -> TrainState:
    cfg.validate()
    groups = parameter_groups(model)
    opt = AdamW(groups, {"head": 1.0, "backbone": cfg.backbone_lr_mult}, cfg.betas, cfg.eps, cfg.weight_decay)
    return TrainState(model, EMA(model, cfg.ema_decay, cfg.ema_warmup), opt, cfg)


def compute_loss(model: AGENet, x: np.ndarray, y: np.ndarray, epoch: float, mixup_active: bool, cfg: TrainConfig):
    out: HeadOutput = model(x)
    evi = evidential_loss(out, y, epoch)
    if model.variant.rank:
        rank = ranking_loss(out.gamma, mine_pairs(y, mixup_active), cfg.margin)
        total = total_loss(evi, rank, cfg.alpha_rank)
    else:
        rank = T.Tensor(np.zeros((), dtype=evi.dtype))
        total = evi
    return total, evi, rank


def train_step(state: TrainState, xb: np.ndarray, yb: np.ndarray, rng: np.random.Generator, lr: float) -> StepResult:
    cfg, model = state.cfg, state.model
    model.train()
    use_mixup = cfg.mixup_p > 0 and rng.random() < cfg.mixup_p
    if use_mixup:
        xb, yb, _ = mixup(xb, yb, rng, cfg.mixup_alpha)
    model.zero_grad()
    total, evi, rank = compute_loss(model, xb, yb, state.epoch, use_mixup, cfg)
    res = StepResult(evi.item(), rank.item(), total.item(), use_mixup)
    if not np.isfinite(res.L_total):
        log.warning("non-finite loss at step %d; update skipped", state.step)
        state.skipped += 1
        res.skipped = True
        return res
    total.backward()
    state.optimizer.step(lr)
    state.ema.update(model)
    state.step += 1
    return res


def predict(model: AGENet, X: np.ndarray, batch_size: int = 32, tta: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Continuous scores and predictive variances; with ``tta`` both are averaged over a horizontal flip."""
    model.eval()
    in_ch = model.cfg.backbone.in_channels
    gammas, variances = [], []
    with T.no_grad():
        for i in range(0, len(X), batch_size):
            xb = to_model_input(X[i : i + batch_size], in_ch, model.dtype)
            out = model(xb)
            g, v = out.gamma.data.astype(np.float64), out.variance().astype(np.float64)
            if tta:
                flipped = model(np.ascontiguousarray(xb[..., ::-1]))
                g = 0.5 * (g + flipped.gamma.data)
                v = 0.5 * (v + flipped.variance())
            gammas.append(g)
            variances.append(v)
    return np.concatenate(gammas), np.concatenate(variances)


def evaluate(model: AGENet, X: np.ndarray, y: np.ndarray, tta: bool = False) -> dict:
    gamma, var = predict(model, X, tta=tta)
    grades = grade_from_score(gamma)
    return {"qwk": qwk(np.asarray(y, dtype=int), grades), **basic_metrics(y, gamma)}


def fit(
    model: AGENet,
    X: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig,
    X_val: np.ndarray | None = None,
    y_val: np.ndarray | None = None,
    on_epoch: Callable[[TrainState, dict], None] | None = None,
    state: TrainState | None = None,
) -> TrainState:
    """Train for ``cfg.epochs`` epochs; ``on_epoch`` receives the epoch log record."""
    state = state or init_state(model, cfg)
    y = np.asarray(y, dtype=np.float64)
    in_ch = model.cfg.backbone.in_channels
    n = len(X)
    steps = max(1, math.ceil(n / cfg.batch_size))
    while state.epoch < cfg.epochs:
        e = state.epoch
        order = substream(cfg.seed, STREAM_DATA, e).permutation(n)
        aug_rng = substream(cfg.seed, STREAM_AUGMENT, e)
        sums = {"L_evi": 0.0, "L_rank": 0.0, "L_total": 0.0}
        done = 0
        for s in range(steps):
            idx = order[s * cfg.batch_size : (s + 1) * cfg.batch_size]
            xb = np.stack([augment(np.asarray(X[i], dtype=np.float32), cfg.augment, aug_rng) for i in idx])
            xb = to_model_input(xb, in_ch, model.dtype)
            lr = cosine_lr(e + s / steps, cfg.epochs, cfg.lr)
            res = train_step(state, xb, y[idx], aug_rng, lr)
            if not res.skipped:
                done += 1
                for key in sums:
                    sums[key] += getattr(res, key)
        record = {"epoch": e + 1, "lr": cosine_lr(e, cfg.epochs, cfg.lr)}
        record.update({k: v / max(done, 1) for k, v in sums.items()})
        if X_val is not None and len(X_val):
            m = evaluate(state.ema.model, X_val, y_val)
            record.update({"val_qwk": m["qwk"], "val_mse": m["mse"]})
        state.epoch += 1
        state.history.append(record)
        if on_epoch is not None:
            on_epoch(state, record)
    return state
