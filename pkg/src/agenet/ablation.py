"""Ablation sweeps: variant x seed runs, aggregated into a mean±SD table with paired tests vs full."""

from __future__ import annotations

import copy
import csv
import logging
from dataclasses import dataclass
from pathlib import Path

from .config import resolve_variant
from .metrics import paired_tests, seed_aggregate
from .runner import train_run, write_json

log = logging.getLogger(__name__)

METRICS = ("qwk", "mse", "acc", "f1", "recall")
HEADERS = ("Variant", "QWK", "MSE", "ACC", "F1", "Rec", "ΔQWK vs full", "t", "p", "d", "95% CI")


@dataclass(frozen=True)
class SweepRow:
    """One report row: a named variant, optionally with AGR k / grid overrides."""

    label: str
    variant: str
    agr_k: int | None = None
    agr_grid: int | None = None

    def config(self, cfg: dict) -> dict:
        cfg = copy.deepcopy(cfg)
        if self.agr_k is not None:
            cfg["agr"]["k"] = self.agr_k
        if self.agr_grid is not None:
            cfg["agr"]["grid"] = self.agr_grid
        return cfg


def sweep_rows(variants, agr_k=(), agr_grid=()) -> list[SweepRow]:
    rows = [SweepRow(v, v) for v in variants]
    rows += [SweepRow(f"full_k{k}", "full", agr_k=k) for k in agr_k]
    rows += [SweepRow(f"full_grid{g}", "full", agr_grid=g) for g in agr_grid]
    return rows


def run_sweep(cfg: dict, rows: list[SweepRow], seeds: list[int], out, splits: dict) -> tuple[dict, list[dict]]:
    """Train and test every (row, seed). Failures are recorded and the sweep goes on."""
    out = Path(out)
    results: dict[str, dict[int, dict]] = {r.label: {} for r in rows}
    failures = []
    for row in rows:
        row_cfg = row.config(cfg)
        for seed in seeds:
            run_dir = out / "runs" / row.label / f"seed{seed}"
            try:
                variant = resolve_variant(row_cfg, row.variant)
                res = train_run(row_cfg, variant, seed, run_dir, splits)
                if "test" not in res:
                    raise ValueError("test split is empty")
                results[row.label][seed] = res["test"]["metrics"]
            except Exception as exc:
                log.error("run %s seed %d failed: %s", row.label, seed, exc)
                failures.append({"row": row.label, "seed": seed, "error": f"{type(exc).__name__}: {exc}"})
    return results, failures


def _num(v, digits=4) -> str:
    return "n/a" if v is None else f"{v:.{digits}f}"


def summarize(results: dict[str, dict[int, dict]], seeds: list[int], bootstrap_seed: int = 0) -> dict:
    """Per-row mean±SD and paired tests vs ``full``; bootstrap draws come from the seed's bootstrap substream."""
    summary = {"seeds": list(seeds), "rows": {}}
    full = results.get("full", {})
    for label, per_seed in results.items():
        done = [s for s in seeds if s in per_seed]
        entry = {"n_seeds": len(done), "aggregate": None, "vs_full": None}
        if done:
            entry["aggregate"] = seed_aggregate([{m: per_seed[s][m] for m in METRICS} for s in done])
        shared = [s for s in done if s in full]
        if label != "full" and len(shared) >= 2:
            a = [per_seed[s]["qwk"] for s in shared]
            b = [full[s]["qwk"] for s in shared]
            entry["vs_full"] = paired_tests(a, b, seed=bootstrap_seed)
        summary["rows"][label] = entry
    return summary


def report_table(summary: dict) -> str:
    lines = ["| " + " | ".join(HEADERS) + " |", "|" + "|".join("---" for _ in HEADERS) + "|"]
    for label, entry in summary["rows"].items():
        agg = entry["aggregate"]
        cells = [label] + [agg[m]["text"] if agg else "failed" for m in METRICS]
        t = entry["vs_full"]
        if label == "full":
            cells += ["reference"] + ["-"] * 4
        elif t is None:
            cells += ["n/a"] * 5
        else:
            cells += [
                f"{t['mean_diff']:+.4f}",
                _num(t["t"], 3),
                _num(t["p"], 4),
                _num(t["cohen_d"], 3),
                f"[{t['ci_low']:+.4f}, {t['ci_high']:+.4f}]",
            ]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def write_report(out, results, summary, failures, seeds) -> None:
    out = Path(out)
    n = len(seeds)
    text = [
        f"# Ablation (mean±std over {n} seed{'s' if n != 1 else ''})",
        "",
        report_table(summary),
        "Paired statistics compare per-seed test QWK of each row against `full` (row minus full):",
        "two-sided paired t-test, Cohen's d on the differences, and a 95% percentile bootstrap CI",
        "over resampled seeds. F1 and recall are macro-averaged over grades present in the ground truth.",
        "",
    ]
    if failures:
        text += ["## Failed runs", ""] + [f"- {f['row']} seed {f['seed']}: {f['error']}" for f in failures] + [""]
    (out / "report.md").write_text("\n".join(text))
    with open(out / "per_seed.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "seed", *METRICS])
        for label, per_seed in results.items():
            for s in seeds:
                if s in per_seed:
                    w.writerow([label, s, *(f"{per_seed[s][m]:.6f}" for m in METRICS)])
    write_json(out / "summary.json", {**summary, "failures": failures})

