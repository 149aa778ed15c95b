"""Randomized finite-difference probes of each differentiable module, in double precision.

Each trial draws a fresh small module and input, then compares autodiff
against central differences on the scalar <output, R> for a fixed random R
(or the module's own loss for the head, ranking and end-to-end probes).
Inputs are redrawn until no probe sits near a discontinuity we can see in
advance: kNN ties in AGR and hinge kinks in the ranking loss. ReLU, |.| and
max kinks are caught per entry by the one-sided difference test in gradcheck.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .agr import AGR
from .backbone import BackboneConfig
from .dfr import DFR
from .evidential import COEHead, evidential_loss
from .model import AGENet, ModelConfig, build_variant
from .ordinal import MARGIN, mine_pairs, ranking_loss
from .ssf import SSF
from .training import TrainConfig, compute_loss

MODULES = ("ssf", "agr", "dfr", "coe", "rank", "full")
# minimum gap between the k-th and (k+1)-th neighbor distance, and between a hinge argument and 0
SAFE_GAP = 1e-3


@dataclass
class ProbeResult:
    module: str
    tol: float
    trials: int
    errors: dict[str, float] = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)
    kinks: int = 0
    redraws: int = 0
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return not self.failures and all(e <= self.tol for e in self.errors.values())

    def merge(self, report: T.GradcheckReport, trial: int) -> None:
        for name, err in report.errors.items():
            self.errors[name] = max(self.errors.get(name, 0.0), err)
        self.failures.extend(f"trial {trial}: {f}" for f in report.failures)
        self.kinks += report.kinks


def _linear_functional(out: T.Tensor, rng) -> T.Tensor:
    R = rng.standard_normal(out.shape)
    return (out * R).sum()


def _params(module, **inputs) -> dict[str, T.Tensor]:
    params = dict(inputs)
    params.update(dict(module.named_parameters()))
    return params


def _knn_margin(tokens: np.ndarray, k: int) -> float:
    pts = np.swapaxes(tokens, 1, 2)
    d = np.sqrt(((pts[:, :, None, :] - pts[:, None, :, :]) ** 2).sum(-1))
    N = d.shape[-1]
    d[:, np.arange(N), np.arange(N)] = np.inf
    s = np.sort(d, axis=-1)
    return float((s[..., k] - s[..., k - 1]).min())


def _jitter_spectral(ssf: SSF, rng) -> None:
    # the init (w = 1 + 0i) makes the spectral branch an exact identity, which parks
    # ReLU-zeroed regions downstream right on the |.| kink; probe a generic point instead
    ssf.w_real.data[...] = 1.0 + 0.3 * rng.standard_normal(ssf.w_real.shape)
    ssf.w_imag.data[...] = 0.3 * rng.standard_normal(ssf.w_imag.shape)


def _setup_ssf(rng):
    C = int(rng.choice([8, 16]))
    m = SSF(C, rng, reduction=4)
    _jitter_spectral(m, rng)
    x = T.Tensor(rng.standard_normal((2, C, int(rng.integers(3, 7)), int(rng.integers(3, 7)))), requires_grad=True)
    seed = int(rng.integers(2**32))
    return (lambda: _linear_functional(m(x), np.random.default_rng(seed))), _params(m, x=x), 0


def _setup_agr(rng):
    redraws = 0
    while True:
        C, k, grid = 8, int(rng.choice([2, 3, 5])), 3
        m = AGR(C, rng, k=k, grid=grid)
        x = T.Tensor(rng.standard_normal((2, C, 6, 6)), requires_grad=True)
        with T.no_grad():
            tokens = m.tokenize(x).data
        if _knn_margin(tokens, k) > SAFE_GAP:
            break
        redraws += 1
    seed = int(rng.integers(2**32))
    return (lambda: _linear_functional(m(x), np.random.default_rng(seed))), _params(m, x=x), redraws


def _setup_dfr(rng):
    C = int(rng.choice([4, 8]))
    m = DFR(C, rng)
    x = T.Tensor(rng.standard_normal((2, C, int(rng.integers(3, 7)), int(rng.integers(3, 7)))), requires_grad=True)
    seed = int(rng.integers(2**32))
    return (lambda: _linear_functional(m(x), np.random.default_rng(seed))), _params(m, x=x), 0


def _setup_coe(rng):
    C, B = 8, 6
    m = COEHead(C, rng)
    m.fc.weight.data[...] = rng.standard_normal(m.fc.weight.shape)
    z = T.Tensor(rng.standard_normal((B, C)), requires_grad=True)
    y = rng.uniform(0, 4, size=B)
    t = float(rng.uniform(0, 30))
    return (lambda: evidential_loss(m(z), y, t)), _params(m, z=z), 0


def _setup_rank(rng):
    redraws = 0
    while True:
        y = rng.integers(0, 5, size=8).astype(np.float64)
        s = rng.uniform(-1, 5, size=8)
        pairs = mine_pairs(y)
        if len(pairs) and np.abs(MARGIN - (s[pairs[:, 0]] - s[pairs[:, 1]])).min() > SAFE_GAP:
            break
        redraws += 1
    scores = T.Tensor(s, requires_grad=True)
    return (lambda: ranking_loss(scores, pairs)), {"scores": scores}, redraws


def _setup_full(rng):
    bb = BackboneConfig(in_channels=3, stem_channels=4, stem_stride=2, stages=[(8, 1, 2), (16, 1, 2)], image_size=None)
    redraws = 0
    while True:
        model = AGENet(build_variant("full", agr_k=3, agr_grid=3), ModelConfig(backbone=bb), seed=int(rng.integers(2**31)))
        model.train()
        _jitter_spectral(model.ssf, rng)
        x = rng.standard_normal((4, 3, 24, 24))
        with T.no_grad():
            tokens = model.agr.tokenize(model.ssf(model.backbone(T.Tensor(x)))).data
        if _knn_margin(tokens, 3) > SAFE_GAP:
            break
        redraws += 1
    y = np.array([0.0, 1.0, 3.0, 4.0])
    cfg = TrainConfig()
    t = float(rng.uniform(0, 30))
    return (lambda: compute_loss(model, x, y, t, False, cfg)[0]), dict(model.named_parameters()), redraws


SETUPS = {"ssf": _setup_ssf, "agr": _setup_agr, "dfr": _setup_dfr, "coe": _setup_coe, "rank": _setup_rank, "full": _setup_full}


def run_probe(module: str, trials: int = 20, tol: float = 1e-4, seed: int = 0, max_entries: int | None = None) -> ProbeResult:
    if module not in SETUPS:
        raise ValueError(f"unknown module {module!r}; choose from {', '.join(MODULES)}")
    if max_entries is None:
        max_entries = 3 if module == "full" else 24
    res = ProbeResult(module, tol, trials)
    start = time.perf_counter()
    for trial in range(trials):
        rng = np.random.default_rng([seed, 4, MODULES.index(module), trial])
        f, params, redraws = SETUPS[module](rng)
        res.redraws += redraws
        report = T.gradcheck(f, params, tol=tol, max_entries=max_entries, rng=rng, skip_kinks=True)
        res.merge(report, trial)
    res.seconds = time.perf_counter() - start
    return res
