"""Evaluation protocols over finished runs.

Three reports, all pure functions of their input logs:

* from-scratch learning curves: retrain a fresh model on each budget
  snapshot alone and score it on the held-out test split, so the number
  measures how informative the selected samples were, not accumulated
  model state;
* per-step speed: mean sampling-step wall-clock per strategy, normalized
  to the full-scan baseline, plus the scaling of step time with pool size;
* selection margins: per-step mean margin series and a windowed histogram.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import CLASSIFICATION, Dataset
from .model import DecoderModel, TrainConfig, predict_label
from .loop import train_to_plateau

log = logging.getLogger(__name__)

WARMUP_STEPS = 5  # selection steps dropped before averaging wall-clock
HISTOGRAM_BINS = 30


def read_jsonl(path: str | Path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def write_csv(path: str | Path, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in columns})


# -- from-scratch learning curves ---------------------------------------------


def token_micro_f1(pred: list[np.ndarray], gold: list[np.ndarray]) -> float:
    """Token-level micro F1 with label 0 treated as background."""
    tp = fp = fn = 0
    for p, g in zip(pred, gold):
        p = np.asarray(p)
        g = np.asarray(g)
        tp += int(((p == g) & (g != 0)).sum())
        fp += int(((p != 0) & (p != g)).sum())
        fn += int(((g != 0) & (p != g)).sum())
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


@dataclass
class ScratchResult:
    fraction: float
    n_labeled: int
    metric: str
    value: float
    train_steps: int


def eval_from_scratch(
    dataset: Dataset,
    checkpoints: list[tuple[float, np.ndarray, list]],
    architecture: str = "linear",
    hidden_width: int = 32,
    train_config: TrainConfig | None = None,
    plateau_tol: float = 1e-4,
    plateau_patience: int = 20,
    max_steps: int = 2000,
    seed: int = 0,
) -> list[ScratchResult]:
    """Retrain a fresh decoder on each budget snapshot and score it on the
    test split. Snapshots are (fraction, ids, labels); only those ids and
    labels are ever touched."""
    if dataset.test_vectors is None:
        raise ValueError("dataset has no test split; cannot evaluate from scratch")
    train_config = train_config or TrainConfig()
    results = []
    for fraction, ids, labels in checkpoints:
        if len(ids) == 0:
            log.warning("empty snapshot at fraction %s skipped", fraction)
            continue
        rng = np.random.default_rng(np.random.SeedSequence((seed, int(round(fraction * 1e6)))))
        decoder = DecoderModel.create(
            architecture, dataset.dim, dataset.num_classes, hidden_width,
            seed=int(rng.integers(2**31)),
        )
        if dataset.task == CLASSIFICATION:
            X = dataset.vectors[np.asarray(ids, dtype=np.int64)].astype(np.float64)
            Y = np.asarray([int(v) for v in labels], dtype=np.int64)
            weights = None
        else:
            blocks = [dataset.tokens(int(i)).astype(np.float64) for i in ids]
            X = np.concatenate(blocks)
            Y = np.concatenate([np.asarray(v, dtype=np.int64) for v in labels])
            weights = np.concatenate([np.full(len(b), 1.0 / len(ids)) for b in blocks])
        steps = train_to_plateau(decoder, X, Y, weights, train_config,
                                 plateau_tol, plateau_patience, max_steps, rng)
        if dataset.task == CLASSIFICATION:
            pred = predict_label(decoder, dataset.test_vectors.astype(np.float64))
            value = float(np.mean(pred == np.asarray(dataset.test_gold)))
            metric = "accuracy"
        else:
            if dataset.test_token_flat is None:
                raise ValueError("labeling dataset has no test token embeddings")
            preds = []
            for i in range(len(dataset.test_gold)):
                tok = dataset.test_tokens(i)
                preds.append(predict_label(decoder, tok.astype(np.float64)))
            value = token_micro_f1(preds, dataset.test_gold)
            metric = "token_micro_f1"
        results.append(ScratchResult(fraction, len(ids), metric, value, steps))
    return results


# -- speed --------------------------------------------------------------------


@dataclass
class SpeedRow:
    strategy: str
    pool_size: int
    mean_step_us: float          # selection stage, warmed up
    amortized_rebuild_us: float  # mapper maintenance share per step
    effective_step_us: float     # what the speedup ratio uses
    scan_count: int
    mean_select_evals: float
    speedup_vs_us: float | None = None


def speed_report(
    timing_logs: list[tuple[str, int, list[dict]]],
    warmup: int = WARMUP_STEPS,
) -> list[SpeedRow]:
    """Summarize per-selection-step cost from timings logs.

    ``timing_logs`` holds (strategy, pool_size, timing records). For the
    full-scan baseline the per-step cost is the cost of its scan (steps that
    merely serve the previous ranking are not selection work). Speedup
    ratios compare selection-stage means, normalized to the full-scan
    baseline at the same pool size; mapper maintenance is amortized over the
    fine-tune schedule and reported alongside (``effective_step_us``) rather
    than folded into the ratio, since index rebuilds ride on the encoder
    update cadence, not on selection.
    """
    rows: list[SpeedRow] = []
    for strategy, pool_size, records in timing_logs:
        records = [r for r in records if r["step"] >= warmup]
        if not records:
            continue
        if strategy == "us":
            scans = [r for r in records if r.get("scan")]
            base = scans if scans else records
            mean_step = float(np.mean([r["select_us"] for r in base]))
            scan_count = len(scans)
            rebuild = 0.0
        else:
            mean_step = float(np.mean([r["select_us"] for r in records]))
            rebuild = float(np.sum([r.get("mapper_build_us", 0) for r in records])) / len(records)
            scan_count = 0
        evals = float(np.mean([r.get("select_evals", 0) for r in records]))
        rows.append(SpeedRow(
            strategy=strategy,
            pool_size=pool_size,
            mean_step_us=mean_step,
            amortized_rebuild_us=rebuild,
            effective_step_us=mean_step + rebuild,
            scan_count=scan_count,
            mean_select_evals=evals,
        ))
    by_size_us = {row.pool_size: row.mean_step_us for row in rows if row.strategy == "us"}
    for row in rows:
        base = by_size_us.get(row.pool_size)
        if base is not None and row.mean_step_us > 0:
            row.speedup_vs_us = base / row.mean_step_us
        elif base is None:
            log.warning("no full-scan log at pool size %d; ratios omitted", row.pool_size)
    return rows


def speed_rows_to_csv(path: str | Path, rows: list[SpeedRow]) -> None:
    write_csv(
        path,
        [
            {
                "strategy": r.strategy,
                "pool_size": r.pool_size,
                "mean_step_us": f"{r.mean_step_us:.1f}",
                "amortized_rebuild_us": f"{r.amortized_rebuild_us:.1f}",
                "effective_step_us": f"{r.effective_step_us:.1f}",
                "scan_count": r.scan_count,
                "mean_select_evals": f"{r.mean_select_evals:.1f}",
                "speedup_vs_us": "" if r.speedup_vs_us is None else f"{r.speedup_vs_us:.2f}",
            }
            for r in rows
        ],
        ["strategy", "pool_size", "mean_step_us", "amortized_rebuild_us",
         "effective_step_us", "scan_count", "mean_select_evals", "speedup_vs_us"],
    )


# -- margins -------------------------------------------------------------------


@dataclass
class MarginReport:
    series: list[dict]        # step, strategy, seed, mean_margin
    histogram: list[dict]     # strategy, bin_lo, bin_hi, count
    windowed_means: list[dict]  # strategy, seed, mean_margin over window


def margin_report(
    event_logs: list[tuple[str, int, list[dict]]],
    window: tuple[float, float] = (0.8, 1.0),
) -> MarginReport:
    """Per-step mean selection margin plus a histogram over a step window.

    ``window`` is a (start, end) fraction of each run's steps; the default
    covers the final fifth, where selection margins have settled.
    """
    lo_frac, hi_frac = window
    if not 0.0 <= lo_frac < hi_frac <= 1.0 + 1e-9:
        log.warning("margin window %s clamped to [0, 1]", window)
        lo_frac = min(max(lo_frac, 0.0), 1.0)
        hi_frac = min(max(hi_frac, lo_frac), 1.0)
    series = []
    window_values: dict[str, list[float]] = {}
    windowed_means = []
    for strategy, seed, events in event_logs:
        n = len(events)
        lo = int(np.floor(lo_frac * n))
        hi = int(np.ceil(hi_frac * n))
        in_window: list[float] = []
        for ev in events:
            margins = [m for m in ev.get("margin", []) if m == m]  # drop NaN
            if not margins:
                continue
            mean = float(np.mean(margins))
            series.append({"step": ev["step"], "strategy": strategy,
                           "seed": seed, "mean_margin": mean})
            if lo <= ev["step"] < hi:
                in_window.extend(margins)
        if in_window:
            window_values.setdefault(strategy, []).extend(in_window)
            windowed_means.append({"strategy": strategy, "seed": seed,
                                   "mean_margin": float(np.mean(in_window))})
    histogram = []
    edges = np.linspace(0.0, 1.0, HISTOGRAM_BINS + 1)
    for strategy, values in sorted(window_values.items()):
        counts, _ = np.histogram(np.clip(values, 0.0, 1.0), bins=edges)
        for b in range(HISTOGRAM_BINS):
            histogram.append({
                "strategy": strategy,
                "bin_lo": round(float(edges[b]), 6),
                "bin_hi": round(float(edges[b + 1]), 6),
                "count": int(counts[b]),
            })
    return MarginReport(series, histogram, windowed_means)


def bootstrap_mean_difference(
    a: np.ndarray, b: np.ndarray, draws: int = 10_000, seed: int = 0
) -> tuple[float, float]:
    """Percentile bootstrap of mean(a) - mean(b) over paired per-seed values.

    Returns the (2.5%, 5%) lower quantiles of the resampled mean difference;
    a positive 5% quantile means the difference is positive at 95% confidence.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    diffs = a - b
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(diffs), size=(draws, len(diffs)))
    means = diffs[idx].mean(axis=1)
    return float(np.quantile(means, 0.025)), float(np.quantile(means, 0.05))
