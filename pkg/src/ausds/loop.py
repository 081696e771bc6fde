"""End-to-end active learning loop.

Per step: one decoder train step on the current batch (frozen encoder),
strategy selection, oracle labeling and pool commit, mapper removal, next
batch composition favoring fresh labels, and on the fine-tune schedule a
joint encoder+decoder update followed by a mapper rebuild.

The loop is single-threaded and fully deterministic for a fixed (dataset,
configs, seed): the selection event stream is byte-replayable. Wall-clock
stage timings are nondeterministic by nature, so they stream to a separate
timings file rather than the event log.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import LABELING, Dataset, Oracle, PoolState, commit_selection
from .encoder import EmbeddingStore, EncoderStack, fine_tune
from .errors import ConfigurationError, PoolInvariantError
from .fileformats import write_labels
from .knn import LatentMapper, build_mapper
from .model import DecoderModel, TrainConfig, make_optimizer, train_step
from .sampler import (
    AUSDS,
    RM,
    US,
    SamplerConfig,
    SelectionReport,
    ausds_select,
    rm_select,
    selection_diagnostics,
    us_select,
)

log = logging.getLogger(__name__)


@dataclass
class LoopConfig:
    finetune_interval: int = 50
    finetune_steps: int = 50
    fresh_batch_ratio: float = 0.3
    budget_checkpoints: tuple = (0.02, 0.04, 0.06, 0.08, 0.10)
    stop_rule: str = "budget_reached"  # | "pool_exhausted"
    init_plateau_tol: float = 1e-4
    init_plateau_patience: int = 20
    init_max_steps: int = 2000
    mapper_mode: str = "auto"
    seed: int = 0

    def validate(self) -> None:
        if self.finetune_interval < 1:
            raise ConfigurationError("fine-tune interval must be >= 1")
        if self.finetune_steps < 0:
            raise ConfigurationError("fine-tune steps must be >= 0")
        if not 0.0 <= self.fresh_batch_ratio <= 1.0:
            raise ConfigurationError("fresh-batch ratio must be in [0, 1]")
        checkpoints = tuple(self.budget_checkpoints)
        if any(b <= 0 or b > 1 for b in checkpoints):
            raise ConfigurationError("budget checkpoints must lie in (0, 1]")
        if any(b >= a for b, a in zip(checkpoints, checkpoints[1:])):
            raise ConfigurationError("budget checkpoints must strictly increase")
        if self.stop_rule not in ("budget_reached", "pool_exhausted"):
            raise ConfigurationError(f"unknown stop rule {self.stop_rule!r}")


@dataclass
class BudgetCheckpoint:
    fraction: float
    step_index: int
    ids: np.ndarray
    labels: list
    oracle_queries: int


@dataclass
class RunResult:
    events: list[dict]
    checkpoints: list[BudgetCheckpoint]
    steps: int
    events_path: Path | None = None
    timings_path: Path | None = None


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def _json_line(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def train_to_plateau(
    decoder: DecoderModel,
    X: np.ndarray,
    Y: np.ndarray,
    weights_full: np.ndarray | None,
    config: TrainConfig,
    tol: float,
    patience: int,
    max_steps: int,
    rng: np.random.Generator,
) -> int:
    """Train until the full-set loss stops improving by ``tol`` for
    ``patience`` consecutive steps. Returns the number of steps taken."""
    from .model import loss_and_param_grads

    optimizer = make_optimizer(config)
    n = X.shape[0]
    best = np.inf
    stale = 0
    steps = 0
    for _ in range(max_steps):
        batch = rng.choice(n, size=min(config.batch_size, n), replace=n < config.batch_size)
        w = None if weights_full is None else _renormalize(weights_full[batch])
        train_step(decoder, X[batch], Y[batch], optimizer, w)
        steps += 1
        full_loss, _ = loss_and_param_grads(decoder, X, Y, weights_full)
        if full_loss < best - tol:
            best = full_loss
            stale = 0
        else:
            stale += 1
            if stale >= patience:
                break
    return steps


def _renormalize(w: np.ndarray) -> np.ndarray:
    return w / w.sum()


class ActiveLoop:
    """Mutable state of one active learning run."""

    def __init__(
        self,
        dataset: Dataset,
        pool: PoolState,
        oracle: Oracle,
        decoder: DecoderModel,
        sampler_config: SamplerConfig,
        loop_config: LoopConfig,
        train_config: TrainConfig,
        out_dir: str | Path | None = None,
    ):
        sampler_config.validate()
        loop_config.validate()
        train_config.validate()
        self.dataset = dataset
        self.pool = pool
        self.oracle = oracle
        self.decoder = decoder
        self.sampler_config = sampler_config
        self.loop_config = loop_config
        self.train_config = train_config
        self.stack = EncoderStack(EmbeddingStore.from_dataset(dataset))
        self.mapper: LatentMapper | None = None
        self._initialized = False
        self.optimizer = make_optimizer(train_config)
        self.step_index = 0
        self.batch: list[tuple[int, object]] = []
        self.events: list[dict] = []
        self.checkpoints: list[BudgetCheckpoint] = []
        self._pending_budgets = list(loop_config.budget_checkpoints)
        self._us_ranked: np.ndarray | None = None
        self._us_cursor = 0
        self._us_last_scan_fraction = -1.0
        self._seed_seq = np.random.SeedSequence(loop_config.seed)
        streams = self._seed_seq.spawn(4)
        self._rng_init = np.random.default_rng(streams[0])
        self._rng_select = np.random.default_rng(streams[1])
        self._rng_batch = np.random.default_rng(streams[2])
        self._finetune_base_seed = int(streams[3].generate_state(1)[0] % (2**31))

        self.out_dir = Path(out_dir) if out_dir is not None else None
        self._events_fh = None
        self._timings_fh = None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            (self.out_dir / "checkpoints").mkdir(exist_ok=True)
            self._events_fh = open(self.out_dir / "events.jsonl", "w", encoding="utf-8")
            self._timings_fh = open(self.out_dir / "timings.jsonl", "w", encoding="utf-8")

    # -- setup ---------------------------------------------------------------

    def _training_arrays(self, pairs: list[tuple[int, object]]):
        """Latents, labels, and per-row weights for one training batch."""
        ids = np.asarray([i for i, _ in pairs], dtype=np.int64)
        if self.dataset.task == LABELING:
            blocks = [self.stack.encode_tokens(int(i)) for i in ids]
            X = np.concatenate(blocks, axis=0)
            Y = np.concatenate([np.asarray(lab, dtype=np.int64) for _, lab in pairs])
            weights = np.concatenate(
                [np.full(len(b), 1.0 / len(pairs)) for b in blocks]
            )
            return X, Y, weights
        X = self.stack.encode_many(ids)
        Y = np.asarray([int(lab) for _, lab in pairs], dtype=np.int64)
        return X, Y, None

    def initialize(self) -> None:
        """Train the decoder on the seed labels, build the initial mapper
        (attack-guided strategy only), and draw the first training batch."""
        pairs = list(self.pool.labeled.items())
        X, Y, weights = self._training_arrays(pairs)
        init_steps = train_to_plateau(
            self.decoder, X, Y, weights, self.train_config,
            self.loop_config.init_plateau_tol, self.loop_config.init_plateau_patience,
            self.loop_config.init_max_steps, self._rng_init,
        )
        log.info("initial decoder trained for %d steps on %d seed labels",
                 init_steps, len(pairs))
        if self.sampler_config.strategy == AUSDS:
            self.mapper = build_mapper(self.stack, self.pool.unlabeled_ids(),
                                       self.loop_config.mapper_mode)
        self.batch = self._draw_batch(fresh=[])
        self.step_index = 0
        self._initialized = True

    def _draw_batch(self, fresh: list[tuple[int, object]]) -> list[tuple[int, object]]:
        """Compose the next training batch from fresh labels and the labeled
        pool at ratio q : 1-q, deficits filled from the pool."""
        size = self.train_config.batch_size
        want_fresh = _round_half_up(self.loop_config.fresh_batch_ratio * size)
        take_fresh = min(want_fresh, len(fresh))
        batch: list[tuple[int, object]] = []
        if take_fresh:
            picks = self._rng_batch.choice(len(fresh), size=take_fresh, replace=False)
            batch.extend(fresh[int(j)] for j in np.sort(picks))
        remainder = size - take_fresh
        labeled_ids = sorted(self.pool.labeled)
        if remainder > 0:
            replace = len(labeled_ids) < remainder
            picks = self._rng_batch.choice(len(labeled_ids), size=remainder, replace=replace)
            if replace:
                log.info("labeled pool smaller than batch; drawing with replacement")
            batch.extend(
                (labeled_ids[int(j)], self.pool.labeled[labeled_ids[int(j)]])
                for j in np.sort(picks)
            )
        return batch

    # -- stepping ------------------------------------------------------------

    def _select(self) -> SelectionReport:
        cfg = self.sampler_config
        if cfg.strategy == AUSDS:
            return ausds_select(self.decoder, self.stack, self.mapper, self.batch,
                                self.pool, self.dataset, cfg, self._rng_select)
        if cfg.strategy == RM:
            return rm_select(self.pool, cfg.selection_size, self._rng_select)
        return self._us_step()

    def _us_step(self) -> SelectionReport:
        cfg = self.sampler_config
        due = (
            self._us_ranked is None
            or self.pool.labeled_fraction - self._us_last_scan_fraction >= cfg.us_scan_interval
        )
        if not due:
            served = self._serve_us_cache(cfg.selection_size)
            if served is not None:
                return served
        report = us_select(self.decoder, self.stack, self.pool, self.dataset,
                           cfg.selection_size)
        self._us_ranked = report.ranked_ids
        self._us_cursor = 0
        self._us_last_scan_fraction = self.pool.labeled_fraction
        served = self._serve_us_cache(cfg.selection_size)
        if served is None:
            raise PoolInvariantError("fresh scan produced no servable candidates")
        report.chosen = served.chosen
        report.entropies = np.empty(0)
        return report

    def _serve_us_cache(self, size: int) -> SelectionReport | None:
        """Next still-unlabeled ids from the last ranked scan."""
        if self._us_ranked is None:
            return None
        t0 = time.perf_counter()
        chosen: list[int] = []
        while self._us_cursor < len(self._us_ranked) and len(chosen) < size:
            cand = int(self._us_ranked[self._us_cursor])
            self._us_cursor += 1
            if self.pool.is_unlabeled(cand):
                chosen.append(cand)
        if not chosen and self.pool.unlabeled_count > 0:
            return None  # cache exhausted; caller rescans
        report = SelectionReport(strategy=US, chosen=np.asarray(chosen, dtype=np.int64),
                                 entropies=np.empty(0), margins=np.empty(0))
        report.timings["serve"] = time.perf_counter() - t0
        return report

    def run_step(self) -> dict:
        """One loop iteration; returns the event record."""
        t_start = time.perf_counter()
        X, Y, weights = self._training_arrays(self.batch)
        train_step(self.decoder, X, Y, self.optimizer, weights)
        t_train = time.perf_counter()

        version_at_select = self.stack.version
        report = self._select()
        t_select = time.perf_counter()
        if len(report.chosen) == 0 and self.pool.unlabeled_count > 0:
            raise PoolInvariantError("strategy returned an empty selection on a non-empty pool")

        entropies, margins = selection_diagnostics(self.decoder, self.stack,
                                                   self.dataset, report.chosen)
        fresh = commit_selection(self.pool, report.chosen, self.oracle)
        if self.mapper is not None:
            self.mapper.remove(report.chosen)
            if self.mapper.size != self.pool.unlabeled_count:
                raise PoolInvariantError(
                    f"mapper holds {self.mapper.size} ids, pool has "
                    f"{self.pool.unlabeled_count}"
                )
        self._snapshot_budgets()
        self.batch = self._draw_batch(fresh)
        t_commit = time.perf_counter()

        finetuned = False
        if self.step_index % self.loop_config.finetune_interval == 0:
            ft_config = TrainConfig(
                optimizer=self.train_config.optimizer,
                learning_rate=self.train_config.learning_rate,
                batch_size=self.train_config.batch_size,
                seed=self._finetune_base_seed + self.stack.version,
            )
            fine_tune(self.stack, self.decoder, list(self.pool.labeled.items()),
                      self.loop_config.finetune_steps, ft_config)
            if self.mapper is not None:
                self.mapper = build_mapper(self.stack, self.pool.unlabeled_ids(),
                                           self.loop_config.mapper_mode)
            finetuned = True
        t_end = time.perf_counter()

        event = {
            "step": self.step_index,
            "strategy": report.strategy,
            "selected": [int(i) for i in report.chosen],
            "entropy": [round(float(e), 9) for e in entropies],
            "margin": [round(float(m), 9) for m in margins],
            "n_adversarial": report.n_adversarial,
            "n_random": report.n_random,
            "n_candidates": report.n_candidates,
            "labeled": self.pool.labeled_count,
            "unlabeled": self.pool.unlabeled_count,
            "encoder_version": version_at_select,
            "scan": report.scan_performed,
            "finetuned": finetuned,
            "select_evals": report.decoder_evals,
            "oracle_queries": self.oracle.query_count,
            "warnings": report.warnings,
        }
        timing = {
            "step": self.step_index,
            "train_us": int((t_train - t_start) * 1e6),
            "select_us": int((t_select - t_train) * 1e6),
            "commit_us": int((t_commit - t_select) * 1e6),
            "finetune_rebuild_us": int((t_end - t_commit) * 1e6),
            "total_us": int((t_end - t_start) * 1e6),
            "scan": report.scan_performed,
            "stage_us": {k: int(v * 1e6) for k, v in report.timings.items()},
            "mapper_build_us": (
                int(self.mapper.build_seconds * 1e6)
                if finetuned and self.mapper is not None else 0
            ),
            "select_evals": report.decoder_evals,
        }
        self.events.append(event)
        if self._events_fh is not None:
            self._events_fh.write(_json_line(event))
            self._timings_fh.write(_json_line(timing))
        self.step_index += 1
        return event

    def _snapshot_budgets(self) -> None:
        while self._pending_budgets and self.pool.labeled_fraction >= self._pending_budgets[0]:
            fraction = self._pending_budgets.pop(0)
            ids = self.pool.labeled_ids()
            labels = [self.pool.labeled[int(i)] for i in ids]
            cp = BudgetCheckpoint(fraction, self.step_index, ids, labels,
                                  self.oracle.query_count)
            self.checkpoints.append(cp)
            if self.out_dir is not None:
                name = f"budget_{int(round(fraction * 1000)):04d}.tsv"
                write_labels(self.out_dir / "checkpoints" / name, ids, labels)

    def _should_stop(self) -> bool:
        if self.pool.unlabeled_count == 0:
            return True
        if self.loop_config.stop_rule == "budget_reached":
            target = max(self.loop_config.budget_checkpoints)
            return self.pool.labeled_fraction >= target
        return False

    def close_logs(self) -> None:
        if self._events_fh is not None:
            self._events_fh.close()
            self._timings_fh.close()
            self._events_fh = self._timings_fh = None

    def run(self) -> RunResult:
        if not self._initialized:
            self.initialize()
        try:
            while not self._should_stop():
                self.run_step()
        finally:
            self.close_logs()
        return RunResult(
            events=self.events,
            checkpoints=self.checkpoints,
            steps=self.step_index,
            events_path=None if self.out_dir is None else self.out_dir / "events.jsonl",
            timings_path=None if self.out_dir is None else self.out_dir / "timings.jsonl",
        )
