"""Command line entry points.

Subcommands: ``gen`` (synthetic corpora), ``run`` (execute strategies x
seeds from a config file), ``eval-scratch``, ``report-speed``,
``report-margin``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import load_run_config, execute_all, run_dir
from .data import load_dataset
from .fileformats import read_labels
from .model import TrainConfig
from .reports import (
    eval_from_scratch,
    margin_report,
    read_jsonl,
    speed_report,
    speed_rows_to_csv,
    write_csv,
)
from .synth import SyntheticSpec, generate_synthetic

log = logging.getLogger("ausds")


def _add_gen(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("gen", help="generate a synthetic corpus")
    p.add_argument("--kind", default="gaussian_blobs",
                   choices=["gaussian_blobs", "ring_vs_disk"])
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--per-class", type=int, default=10_000)
    p.add_argument("--spread", type=float, default=1.0)
    p.add_argument("--center-scale", type=float, default=3.0)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--test-per-class", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--name", default="")
    p.add_argument("--out", required=True)


def _add_run(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("run", help="execute strategies x seeds from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--strategy", action="append",
                   help="override the config's strategy list (repeatable)")
    p.add_argument("--seed", type=int, action="append",
                   help="override the config's seed list (repeatable)")
    p.add_argument("--out", help="override the output directory")


def _add_eval(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("eval-scratch", help="from-scratch learning curves per budget")
    p.add_argument("--config", required=True)
    p.add_argument("--runs", help="runs directory (default: config out dir)")
    p.add_argument("--out", help="CSV path (default: <runs>/eval_scratch.csv)")


def _add_speed(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("report-speed", help="per-step speed table normalized to the full scan")
    p.add_argument("--runs", required=True, action="append",
                   help="runs directory (repeatable for the scaling curve)")
    p.add_argument("--out", help="CSV path (default: <first runs>/speed_report.csv)")
    p.add_argument("--warmup", type=int, default=5)


def _add_margin(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("report-margin", help="selection margin series and histogram")
    p.add_argument("--runs", required=True)
    p.add_argument("--out-prefix", help="CSV prefix (default: <runs>/margin)")
    p.add_argument("--window", default="0.8:1.0",
                   help="step-fraction window 'start:end' for the histogram")


def _walk_runs(runs: Path):
    """Yield (strategy, seed, run_dir) for every finished run."""
    for strategy_dir in sorted(p for p in runs.iterdir() if p.is_dir()):
        for seed_dir in sorted(strategy_dir.glob("seed_*")):
            if (seed_dir / "meta.json").exists():
                meta = json.loads((seed_dir / "meta.json").read_text())
                yield meta["strategy"], int(meta["seed"]), seed_dir, meta


def _cmd_gen(args) -> int:
    spec = SyntheticSpec(
        kind=args.kind, dim=args.dim, classes=args.classes,
        samples_per_class=args.per_class, cluster_spread=args.spread,
        center_scale=args.center_scale, boundary_noise=args.noise,
        test_per_class=args.test_per_class, seed=args.seed, name=args.name,
    )
    manifest = generate_synthetic(spec, args.out)
    print(manifest)
    return 0


def _cmd_run(args) -> int:
    cfg = load_run_config(args.config)
    if args.strategy:
        cfg.strategies = args.strategy
    if args.seed:
        cfg.seeds = args.seed
    if args.out:
        cfg.out = args.out
    results = execute_all(cfg)
    for strategy, seed, result in results:
        print(f"{strategy} seed={seed}: {result.steps} steps, "
              f"{len(result.checkpoints)} checkpoints -> {run_dir(cfg, strategy, seed)}")
    return 0


def _cmd_eval(args) -> int:
    cfg = load_run_config(args.config)
    runs = Path(args.runs or cfg.out)
    dataset, _, _ = load_dataset(cfg.dataset, seed=0, seed_fraction=cfg.seed_fraction)
    rows = []
    for strategy, seed, seed_dir, _meta in _walk_runs(runs):
        checkpoints = []
        for tsv in sorted((seed_dir / "checkpoints").glob("budget_*.tsv")):
            fraction = int(tsv.stem.split("_")[1]) / 1000.0
            label_map = read_labels(tsv)
            ids = np.asarray(sorted(label_map), dtype=np.int64)
            labels = [label_map[int(i)] for i in ids]
            checkpoints.append((fraction, ids, labels))
        if not checkpoints:
            log.warning("%s has no checkpoints; skipped", seed_dir)
            continue
        results = eval_from_scratch(
            dataset, checkpoints, cfg.decoder_architecture, cfg.hidden_width,
            TrainConfig(**{**cfg.train.__dict__, "seed": seed}), seed=seed,
        )
        for r in results:
            rows.append({
                "strategy": strategy, "seed": seed, "fraction": r.fraction,
                "n_labeled": r.n_labeled, "metric": r.metric,
                "value": f"{r.value:.6f}", "train_steps": r.train_steps,
            })
    out = Path(args.out) if args.out else runs / "eval_scratch.csv"
    write_csv(out, rows, ["strategy", "seed", "fraction", "n_labeled",
                          "metric", "value", "train_steps"])
    print(out)
    return 0


def _cmd_speed(args) -> int:
    logs = []
    for runs_arg in args.runs:
        for strategy, _seed, seed_dir, meta in _walk_runs(Path(runs_arg)):
            records = read_jsonl(seed_dir / "timings.jsonl")
            logs.append((strategy, int(meta["unlabeled_initial"]), records))
    # merge seeds of the same (strategy, pool size) into one record stream
    merged: dict[tuple[str, int], list[dict]] = {}
    for strategy, size, records in logs:
        merged.setdefault((strategy, size), []).extend(records)
    rows = speed_report([(s, n, recs) for (s, n), recs in sorted(merged.items())],
                        warmup=args.warmup)
    out = Path(args.out) if args.out else Path(args.runs[0]) / "speed_report.csv"
    speed_rows_to_csv(out, rows)
    print(out)
    return 0


def _cmd_margin(args) -> int:
    runs = Path(args.runs)
    lo, _, hi = args.window.partition(":")
    window = (float(lo), float(hi or 1.0))
    logs = []
    for strategy, seed, seed_dir, _meta in _walk_runs(runs):
        logs.append((strategy, seed, read_jsonl(seed_dir / "events.jsonl")))
    report = margin_report(logs, window=window)
    prefix = Path(args.out_prefix) if args.out_prefix else runs / "margin"
    write_csv(str(prefix) + "_series.csv", report.series,
              ["step", "strategy", "seed", "mean_margin"])
    write_csv(str(prefix) + "_histogram.csv", report.histogram,
              ["strategy", "bin_lo", "bin_hi", "count"])
    write_csv(str(prefix) + "_window_means.csv", report.windowed_means,
              ["strategy", "seed", "mean_margin"])
    print(str(prefix) + "_series.csv")
    return 0


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = argparse.ArgumentParser(
        prog="ausds",
        description="Adversarial uncertainty sampling harness for pool-based active learning",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    _add_gen(sub)
    _add_run(sub)
    _add_eval(sub)
    _add_speed(sub)
    _add_margin(sub)
    args = parser.parse_args(argv)
    handlers = {
        "gen": _cmd_gen,
        "run": _cmd_run,
        "eval-scratch": _cmd_eval,
        "report-speed": _cmd_speed,
        "report-margin": _cmd_margin,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
