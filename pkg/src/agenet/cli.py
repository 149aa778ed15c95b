"""agenet command line: synth, train, eval, ablate, gradcheck.

Exit codes: 0 success, 2 usage or configuration error, 3 data or checkpoint
error, 1 internal failure. The default output root comes from
``$AGENET_OUTPUT_ROOT`` (else ./runs).
"""

from __future__ import annotations

import argparse
import logging
import sys
import tempfile
from pathlib import Path

import yaml

from .checkpoint import CheckpointError
from .config import ConfigError, load_config, resolve_variant, synth_spec
from .data import write_synthetic
from .model import VARIANTS
from .runner import output_root

log = logging.getLogger("agenet")

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE, EXIT_DATA = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


def _parse_sets(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, val = item.split("=", 1)
        out[key] = yaml.safe_load(val)
    return out


def _int_list(text: str | None) -> list[int]:
    if not text:
        return []
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"expected a comma-separated list of integers, got {text!r}") from exc


def _config(args, extra: dict | None = None) -> dict:
    overrides = _parse_sets(getattr(args, "set", None))
    overrides.update({k: v for k, v in (extra or {}).items() if v is not None})
    try:
        return load_config(args.config, overrides)
    except (ConfigError, yaml.YAMLError) as exc:
        raise UsageError(str(exc)) from exc


def _variant(cfg: dict, name: str):
    if name not in VARIANTS:
        raise UsageError(f"invalid variant {name!r}; valid variants: {', '.join(VARIANTS)}")
    return resolve_variant(cfg, name)


def _data_root(cfg: dict, flag) -> Path:
    root = flag or cfg["data"].get("root")
    if not root:
        raise UsageError("no dataset given: pass --data DIR or set data.root in the config")
    root = Path(root)
    if not root.is_dir():
        raise UsageError(f"dataset path does not exist: {root}")
    return root


def _ensure_writable(path: Path) -> None:
    try:
        path.mkdir(parents=True, exist_ok=True)
        with tempfile.TemporaryFile(dir=path):
            pass
    except OSError as exc:
        raise UsageError(f"output directory {path} is not writable: {exc}") from exc


def _manifest(command: str, cfg: dict, seeds, variant, out: Path, path: Path | None = None) -> None:
    from .runner import RunManifest

    RunManifest(command, cfg, list(seeds), variant, str(out), argv=sys.argv[1:]).write(path or out / "manifest.json")


def cmd_synth(args) -> int:
    out = Path(args.out)
    _ensure_writable(out)
    if args.n < 1 or args.size < 16:
        raise UsageError("--n must be >= 1 and --size >= 16")
    cfg = _config(args, {"data.synth.size": args.size, "data.synth.label_noise": args.noise})
    spec = synth_spec(cfg, args.seed)
    try:
        spec.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    # the dataset tree must stay byte-identical across reruns, so the timestamped manifest lives elsewhere
    side = Path(args.manifest_dir) if args.manifest_dir else out.parent / f"{out.name}.run"
    _manifest("synth", cfg, [args.seed], None, out, side / "manifest.json")
    rows = write_synthetic(out, spec, args.n)
    counts = [sum(1 for r in rows if r["grade"] == g) for g in range(5)]
    print(f"wrote {len(rows)} images to {out} (per grade: {counts})")
    return EXIT_OK


def cmd_train(args) -> int:
    from .runner import load_splits, train_run

    cfg = _config(args, {"train.epochs": args.epochs})
    variant = _variant(cfg, args.variant)
    root = _data_root(cfg, args.data)
    cfg["data"]["root"] = str(root)
    out = Path(args.out) if args.out else output_root() / f"train-{args.variant}-seed{args.seed}"
    _ensure_writable(out)
    _manifest("train", cfg, [args.seed], variant.name, out)
    try:
        splits = load_splits(cfg, root)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    res = train_run(cfg, variant, args.seed, out, splits)
    test = res.get("test", {}).get("metrics")
    print(f"best epoch {res['best_epoch']}; checkpoint {out / 'best.ckpt'}")
    if test:
        print(" ".join(f"{k}={v:.4f}" for k, v in test.items()))
    return EXIT_OK


def cmd_eval(args) -> int:
    from .runner import eval_run

    ckpt = Path(args.checkpoint)
    root = Path(args.data)
    if not root.is_dir():
        raise UsageError(f"dataset path does not exist: {root}")
    out = Path(args.out) if args.out else ckpt.parent / ("eval-tta" if args.tta else "eval")
    _ensure_writable(out)
    _manifest("eval", {"checkpoint": str(ckpt), "data": str(root), "tta": args.tta}, [], None, out)
    doc = eval_run(ckpt, root, args.tta, out)
    print(" ".join(f"{k}={v:.4f}" for k, v in doc["metrics"].items()) + f"  (n={doc['n']}, written to {out})")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .ablation import run_sweep, summarize, sweep_rows, write_report
    from .runner import load_splits

    cfg = _config(args, {"train.epochs": args.epochs})
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    for v in variants:
        _variant(cfg, v)
    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    seed_list = list(cfg["train"]["seeds"])[: args.seeds]
    if len(seed_list) < args.seeds:
        seed_list = list(range(args.seeds))
    rows = sweep_rows(variants, _int_list(args.agr_k), _int_list(args.agr_grid))
    root = _data_root(cfg, args.data)
    cfg["data"]["root"] = str(root)
    out = Path(args.out)
    _ensure_writable(out)
    _manifest("ablate", cfg, seed_list, ",".join(r.label for r in rows), out)
    try:
        splits = load_splits(cfg, root)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    results, failures = run_sweep(cfg, rows, seed_list, out, splits)
    summary = summarize(results, seed_list, seed_list[0])
    write_report(out, results, summary, failures, seed_list)
    print((out / "report.md").read_text())
    if failures:
        print(f"{len(failures)} run(s) failed; see {out / 'summary.json'}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradprobe import MODULES, run_probe

    if args.module not in MODULES:
        raise UsageError(f"unknown module {args.module!r}; choose from {', '.join(MODULES)}")
    if args.trials < 1 or args.tol <= 0:
        raise UsageError("--trials must be >= 1 and --tol > 0")
    out = Path(args.out) if args.out else output_root() / f"gradcheck-{args.module}"
    _ensure_writable(out)
    _manifest("gradcheck", {"module": args.module, "trials": args.trials, "tol": args.tol}, [args.seed], None, out)
    res = run_probe(args.module, args.trials, args.tol, args.seed)
    width = max(len(k) for k in res.errors) if res.errors else 10
    lines = [f"{'parameter':<{width}}  max rel error  status"]
    for name, err in res.errors.items():
        lines.append(f"{name:<{width}}  {err:13.3e}  {'ok' if err <= args.tol else 'FAIL'}")
    lines += [f"! {f}" for f in res.failures]
    verdict = "PASS" if res.passed else "FAIL"
    lines.append(
        f"{verdict} module={args.module} trials={args.trials} tol={args.tol:g} max={max(res.errors.values(), default=0):.3e} "
        f"kink_probes_excluded={res.kinks} redraws={res.redraws} seconds={res.seconds:.1f}"
    )
    text = "\n".join(lines) + "\n"
    (out / "report.txt").write_text(text)
    print(text, end="")
    return EXIT_OK if res.passed else EXIT_INTERNAL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="agenet", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic graded dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--size", type=int, default=224)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--noise", type=float, help="probability of a +-1 grade flip (label noise)")
    s.add_argument("--manifest-dir", help="where the run manifest goes (default: <out>.run next to the dataset)")
    s.add_argument("--config")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train one variant and keep the best EMA checkpoint")
    t.add_argument("--config")
    t.add_argument("--variant", default="full")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out")
    t.add_argument("--data")
    t.add_argument("--epochs", type=int)
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted config override, repeatable")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on a dataset directory")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--tta", action="store_true")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="variant x seed sweep with a mean±SD report")
    a.add_argument("--config")
    a.add_argument("--variants", default="full,no_rank,no_agr,base")
    a.add_argument("--seeds", type=int, default=3)
    a.add_argument("--out", required=True)
    a.add_argument("--data")
    a.add_argument("--epochs", type=int)
    a.add_argument("--agr-k", help="extra rows of full with these k values, e.g. 5,9,13")
    a.add_argument("--agr-grid", help="extra rows of full with these token grids, e.g. 10,14,16")
    a.add_argument("--set", action="append", metavar="KEY=VALUE")
    a.set_defaults(func=cmd_ablate)

    g = sub.add_parser("gradcheck", help="finite-difference check of a module's gradients")
    g.add_argument("--module", required=True)
    g.add_argument("--trials", type=int, default=20)
    g.add_argument("--tol", type=float, default=1e-4)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out")
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"agenet {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, FileNotFoundError) as exc:
        print(f"agenet {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.exception("internal failure")
        print(f"agenet {args.command}: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
