"""Ordinal grading metrics, uncertainty-quality analyses and seed-level statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats
from sklearn.metrics import f1_score, recall_score

from .evidential import N_GRADES, grade_from_score


def _grades_from_scores(scores) -> np.ndarray:
    return grade_from_score(scores)


def confusion_matrix(true, pred, n: int = N_GRADES) -> np.ndarray:
    t = np.asarray(true, dtype=np.int64)
    p = np.asarray(pred, dtype=np.int64)
    if t.shape != p.shape:
        raise ValueError("true and pred differ in length")
    if t.size and (t.min() < 0 or p.min() < 0 or t.max() >= n or p.max() >= n):
        raise ValueError(f"grades must lie in 0..{n - 1}")
    O = np.zeros((n, n), dtype=np.int64)
    np.add.at(O, (t, p), 1)
    return O


def qwk_from_confusion(O: np.ndarray) -> float:
    O = np.asarray(O, dtype=np.float64)
    n = O.shape[0]
    total = O.sum()
    if total <= 0:
        raise ValueError("QWK needs at least one sample")
    i = np.arange(n)
    w = (i[:, None] - i[None, :]) ** 2 / (n - 1) ** 2
    E = np.outer(O.sum(axis=1), O.sum(axis=0)) / total
    num = (w * O).sum()
    den = (w * E).sum()
    if den == 0:
        if np.allclose(O, E):
            return 1.0
        raise ValueError("QWK undefined: expected disagreement is zero but O != E")
    return float(1.0 - num / den)


def qwk(true, pred) -> float:
    """Quadratic weighted kappa between integer grades in 0..4."""
    return qwk_from_confusion(confusion_matrix(true, pred))


def basic_metrics(true, scores) -> dict:
    """MSE on continuous scores; ACC, macro-F1 and macro-recall on rounded, clipped grades.

    Macro averages run over the grades present in ``true``.
    """
    t = np.asarray(true, dtype=np.float64)
    s = np.asarray(scores, dtype=np.float64)
    if t.size == 0:
        raise ValueError("metrics need at least one sample")
    g = _grades_from_scores(s)
    ti = np.round(t).astype(np.int64)
    present = np.unique(ti)
    return {
        "mse": float(np.mean((s - t) ** 2)),
        "acc": float(np.mean(g == ti)),
        "f1": float(f1_score(ti, g, labels=present, average="macro", zero_division=0)),
        "recall": float(recall_score(ti, g, labels=present, average="macro", zero_division=0)),
    }


def all_metrics(true, scores) -> dict:
    return {"qwk": qwk(np.round(true).astype(int), _grades_from_scores(scores)), **basic_metrics(true, scores)}


@dataclass
class UncertaintyRecord:
    gamma: np.ndarray
    variance: np.ndarray
    true: np.ndarray

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=np.float64)
        self.variance = np.asarray(self.variance, dtype=np.float64)
        self.true = np.asarray(self.true, dtype=np.float64)
        if np.any(self.variance <= 0):
            raise ValueError("variances must be positive")

    @property
    def abs_error(self) -> np.ndarray:
        return np.abs(_grades_from_scores(self.gamma) - self.true)


def risk_coverage(variance, abs_error, coverages=None) -> dict:
    """Selective risk: mean |error| over the ceil(c*n) lowest-variance samples.

    Coverage 0 has no retained samples; its risk is NaN.
    """
    v = np.asarray(variance, dtype=np.float64)
    e = np.asarray(abs_error, dtype=np.float64)
    if coverages is None:
        coverages = np.linspace(0.1, 1.0, 10)
    order = np.argsort(v, kind="stable")
    cum = np.cumsum(e[order])
    risks = []
    for c in coverages:
        k = math.ceil(round(c * len(v), 9))
        risks.append(float("nan") if k == 0 else float(cum[k - 1] / k))
    return {"coverage": [float(c) for c in coverages], "risk": risks}


def binned_uncertainty(variance, abs_error, n_bins: int = 5) -> dict:
    """Mean |error| per equal-count variance bin (raw data for a calibration-style plot)."""
    v = np.asarray(variance, dtype=np.float64)
    e = np.asarray(abs_error, dtype=np.float64)
    order = np.argsort(v, kind="stable")
    bins = [b for b in np.array_split(order, n_bins) if len(b)]
    return {
        "mean_variance": [float(v[b].mean()) for b in bins],
        "mean_abs_error": [float(e[b].mean()) for b in bins],
        "count": [int(len(b)) for b in bins],
    }


def uncertainty_correlation(variance, abs_error) -> dict:
    v = np.asarray(variance, dtype=np.float64)
    e = np.asarray(abs_error, dtype=np.float64)
    if len(v) < 3:
        raise ValueError("correlation needs at least 3 samples")
    if np.ptp(v) == 0 or np.ptp(e) == 0:
        return {"spearman": None, "pearson": None}
    return {"spearman": float(stats.spearmanr(v, e).statistic), "pearson": float(stats.pearsonr(v, e).statistic)}


def fmt_pm(mean: float, sd: float | None, digits: int = 4) -> str:
    if sd is None:
        return f"{mean:.{digits}f}±n/a"
    return f"{mean:.{digits}f}±{sd:.{digits}f}"


def seed_aggregate(per_seed: list[dict]) -> dict:
    """Mean and sample SD (n-1) per metric; SD is None with a single seed."""
    if not per_seed:
        raise ValueError("no per-seed metrics")
    out = {}
    for key in per_seed[0]:
        vals = np.array([m[key] for m in per_seed], dtype=np.float64)
        mean = float(np.mean(vals))
        sd = float(np.std(vals, ddof=1)) if len(vals) >= 2 else None
        out[key] = {"mean": mean, "sd": sd, "text": fmt_pm(mean, sd)}
    return out


def paired_tests(a, b, n_boot: int = 10_000, seed: int = 0, ci: float = 0.95) -> dict:
    """Paired comparison of per-seed scores (a - b): t-test, Cohen's d, bootstrap CI.

    Seeds are resampled with replacement; with three seeds the CI is coarse.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.size < 2:
        raise ValueError("paired tests need two equal-length samples of size >= 2")
    d = a - b
    n = d.size
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    rng = np.random.default_rng([seed, 3])
    boots = d[rng.integers(0, n, size=(n_boot, n))].mean(axis=1)
    lo, hi = np.quantile(boots, [(1 - ci) / 2, 1 - (1 - ci) / 2])
    res = {"n": n, "mean_diff": mean, "ci_low": float(lo), "ci_high": float(hi), "degenerate": False}
    if sd == 0:
        res.update({"t": None, "p": 1.0 if mean == 0 else None, "cohen_d": None, "degenerate": mean != 0})
        return res
    t = mean / (sd / math.sqrt(n))
    p = float(2 * stats.t.sf(abs(t), df=n - 1))
    res.update({"t": float(t), "p": p, "cohen_d": mean / sd})
    return res
