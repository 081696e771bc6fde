"""Sampling strategies and uncertainty measures.

Three strategies: attack-guided selection (attack the current training batch,
map boundary points back to unlabeled samples via KNN, mix with random draws,
rank by entropy), full-scan uncertainty sampling, and uniform random sampling.

Entropies use natural log. All ranking ties break toward the smaller id so
selections are reproducible.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .attacks import AttackConfig, AttackItem, attack_batch
from .data import LABELING, Dataset, PoolState
from .encoder import EncoderStack
from .errors import ConfigurationError, StalenessError
from .knn import LatentMapper
from .model import DecoderModel, predict_proba, softmax

log = logging.getLogger(__name__)

AUSDS = "ausds"
US = "us"
RM = "rm"


@dataclass
class SamplerConfig:
    strategy: str = AUSDS
    attack: AttackConfig = field(default_factory=AttackConfig)
    mix_ratio: float = 0.5  # adversarial share p of the candidate set
    selection_size: int = 32
    knn_k: int = 1
    rank_scope: str = "mixed"  # "mixed" | "adversarial_only"
    us_scan_interval: float = 0.02  # labeled-fraction increment between scans

    def validate(self) -> None:
        if self.strategy not in (AUSDS, US, RM):
            raise ConfigurationError(f"unknown strategy {self.strategy!r}")
        if not 0.0 <= self.mix_ratio <= 1.0:
            raise ConfigurationError("mix ratio must be in [0, 1]")
        if self.selection_size < 1:
            raise ConfigurationError("selection size must be >= 1")
        if self.knn_k < 1:
            raise ConfigurationError("knn k must be >= 1")
        if self.rank_scope not in ("mixed", "adversarial_only"):
            raise ConfigurationError(f"unknown rank scope {self.rank_scope!r}")
        self.attack.validate()


@dataclass
class SelectionReport:
    strategy: str
    chosen: np.ndarray
    entropies: np.ndarray
    margins: np.ndarray
    n_adversarial: int = 0
    n_random: int = 0
    n_candidates: int = 0
    timings: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    scan_performed: bool = False
    decoder_evals: int = 0
    ranked_ids: np.ndarray | None = None  # full scan order, kept by us_select


def max_entropy(probs) -> float:
    """Shannon entropy of one class distribution, in nats."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1:
        raise ConfigurationError(f"expected one distribution, got shape {p.shape}")
    if (p < 0).any() or abs(p.sum() - 1.0) > 1e-4:
        raise ConfigurationError("probabilities must be non-negative and sum to 1")
    return float(-np.sum(np.where(p > 0, p * np.log(np.maximum(p, 1e-300)), 0.0)))


def total_token_entropy(token_probs) -> float:
    """Sum of per-token entropies over a sequence of distributions."""
    seq = np.asarray(token_probs, dtype=np.float64)
    if seq.size == 0:
        log.warning("total_token_entropy of an empty sequence is 0")
        return 0.0
    return float(sum(max_entropy(row) for row in seq))


def entropies_from_probs(P: np.ndarray) -> np.ndarray:
    """Row-wise entropy without per-row validation (vectorized hot path)."""
    P = np.asarray(P, dtype=np.float64)
    return -np.sum(np.where(P > 0, P * np.log(np.maximum(P, 1e-300)), 0.0), axis=-1)


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def _rank_by_entropy(ids: np.ndarray, entropies: np.ndarray, size: int) -> np.ndarray:
    """Indices of the top ``size`` ids by entropy, ties to the smaller id."""
    order = np.lexsort((ids, -entropies))
    return order[: min(size, len(ids))]


def _candidate_entropies(
    decoder: DecoderModel, stack: EncoderStack, dataset: Dataset, ids: np.ndarray
) -> np.ndarray:
    if dataset.task == LABELING:
        return _token_entropies(decoder, stack, ids)
    latents = stack.encode_many(ids)
    return entropies_from_probs(predict_proba(decoder, latents))


def _token_entropies(decoder: DecoderModel, stack: EncoderStack, ids: np.ndarray) -> np.ndarray:
    """Total token entropy per sample, vectorized over the flattened tokens."""
    offsets = stack.store.token_offsets
    lengths = np.asarray([offsets[i + 1] - offsets[i] for i in ids], dtype=np.int64)
    blocks = [stack.store.tokens(int(i)).astype(np.float64) for i in ids]
    flat = stack.apply_adapter(np.concatenate(blocks, axis=0))
    per_token = entropies_from_probs(predict_proba(decoder, flat))
    starts = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    return np.add.reduceat(per_token, starts)


def ausds_select(
    decoder: DecoderModel,
    stack: EncoderStack,
    mapper: LatentMapper,
    batch: list[tuple[int, object]],
    pool: PoolState,
    dataset: Dataset,
    config: SamplerConfig,
    rng: np.random.Generator,
) -> SelectionReport:
    """Attack the training batch, retrieve unlabeled neighbors of the
    successful boundary points, mix in random samples at ratio p : 1-p, and
    keep the highest-entropy candidates.
    """
    config.validate()
    if mapper.encoder_version != stack.version:
        raise StalenessError(
            f"mapper at version {mapper.encoder_version}, encoder at {stack.version}"
        )
    evals_before = decoder.eval_count
    report = SelectionReport(strategy=AUSDS, chosen=np.empty(0, dtype=np.int64),
                             entropies=np.empty(0), margins=np.empty(0))
    p = config.mix_ratio

    t0 = time.perf_counter()
    adversarial_ids = np.empty(0, dtype=np.int64)
    n_queries = 0
    if p > 0.0 and batch:
        items = []
        for sample_id, label in batch:
            if dataset.task == LABELING:
                tokens = stack.encode_tokens(sample_id)
                items.append(AttackItem(sample_id, stack.version, tokens.mean(axis=0),
                                        np.asarray(label), tokens))
            else:
                latent = stack.encode(sample_id)
                items.append(AttackItem(sample_id, stack.version, latent.vector, int(label)))
        points = attack_batch(decoder, items, config.attack)
        queries = [pt.x_prime for pt in points if pt.success]
        n_queries = len(queries)
        t1 = time.perf_counter()
        if queries:
            hits = mapper.query(queries, config.knn_k, version=stack.version)
            adversarial_ids = np.unique(np.concatenate(hits)) if hits else adversarial_ids
        t2 = time.perf_counter()
        report.timings["attack"] = t1 - t0
        report.timings["knn"] = t2 - t1
    else:
        report.timings["attack"] = 0.0
        report.timings["knn"] = 0.0

    t3 = time.perf_counter()
    n_adv = len(adversarial_ids)
    if p == 0.0:
        adversarial_ids = np.empty(0, dtype=np.int64)
        n_adv = 0
        random_size = config.selection_size
    elif n_adv == 0:
        report.warnings.append("all attacks failed; degrading to random candidates")
        log.warning("step with no successful attacks (%d queries); random candidates", n_queries)
        random_size = config.selection_size
    elif p >= 1.0:
        random_size = 0
    else:
        random_size = _round_half_up(n_adv * (1.0 - p) / p)
    exclude = set(int(i) for i in adversarial_ids)
    random_ids = pool.sample_unlabeled(random_size, rng, exclude=exclude)
    candidates = np.union1d(adversarial_ids, random_ids)
    t4 = time.perf_counter()
    report.timings["mix"] = t4 - t3

    if len(candidates) == 0:
        report.timings["rank"] = 0.0
        report.n_adversarial = 0
        report.n_random = 0
        report.decoder_evals = decoder.eval_count - evals_before
        return report

    if config.rank_scope == "adversarial_only" and n_adv > 0:
        adv_entropies = _candidate_entropies(decoder, stack, dataset, adversarial_ids)
        top = _rank_by_entropy(adversarial_ids, adv_entropies, config.selection_size)
        chosen = adversarial_ids[top]
        chosen_entropy = adv_entropies[top]
        fill = config.selection_size - len(chosen)
        if fill > 0 and len(random_ids):
            pad = random_ids[:fill]
            chosen = np.concatenate([chosen, pad])
            pad_entropy = _candidate_entropies(decoder, stack, dataset, pad)
            chosen_entropy = np.concatenate([chosen_entropy, pad_entropy])
    else:
        entropies = _candidate_entropies(decoder, stack, dataset, candidates)
        top = _rank_by_entropy(candidates, entropies, config.selection_size)
        chosen = candidates[top]
        chosen_entropy = entropies[top]
    t5 = time.perf_counter()

    report.timings["rank"] = t5 - t4
    report.chosen = chosen
    report.entropies = chosen_entropy
    report.n_adversarial = n_adv
    report.n_random = len(random_ids)
    report.n_candidates = len(candidates)
    report.decoder_evals = decoder.eval_count - evals_before
    return report


def us_select(
    decoder: DecoderModel,
    stack: EncoderStack,
    pool: PoolState,
    dataset: Dataset,
    selection_size: int,
) -> SelectionReport:
    """Full pool scan: entropy of every unlabeled sample at the current
    encoder version, top ranked returned. Records the scan wall-clock."""
    evals_before = decoder.eval_count
    t0 = time.perf_counter()
    ids = pool.unlabeled_ids()
    if len(ids) == 0:
        return SelectionReport(strategy=US, chosen=np.empty(0, dtype=np.int64),
                               entropies=np.empty(0), margins=np.empty(0),
                               scan_performed=True)
    entropies = _candidate_entropies(decoder, stack, dataset, ids)
    # keep the whole ranked order so steps between scans can serve from it
    full_order = np.lexsort((ids, -entropies))
    top = full_order[: min(selection_size, len(ids))]
    elapsed = time.perf_counter() - t0
    report = SelectionReport(
        strategy=US,
        chosen=ids[top],
        entropies=entropies[top],
        margins=np.empty(0),
        n_candidates=len(ids),
        scan_performed=True,
        decoder_evals=decoder.eval_count - evals_before,
        ranked_ids=ids[full_order],
    )
    report.timings["scan"] = elapsed
    return report


def rm_select(pool: PoolState, selection_size: int, rng: np.random.Generator) -> SelectionReport:
    """Uniform draw without replacement from the unlabeled pool."""
    chosen = pool.sample_unlabeled(selection_size, rng)
    return SelectionReport(strategy=RM, chosen=chosen,
                           entropies=np.empty(0), margins=np.empty(0),
                           n_random=len(chosen), n_candidates=len(chosen))


def selection_diagnostics(
    decoder: DecoderModel, stack: EncoderStack, dataset: Dataset, ids: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Entropy and margin of each selected sample, for the metrics stream.

    Margin is only defined for classification; labeling gets NaNs.
    """
    if len(ids) == 0:
        return np.empty(0), np.empty(0)
    if dataset.task == LABELING:
        return _token_entropies(decoder, stack, ids), np.full(len(ids), np.nan)
    latents = stack.encode_many(ids)
    probs = softmax(decoder.logits(latents))
    entropies = entropies_from_probs(probs)
    top2 = np.sort(probs, axis=1)[:, -2:]
    margins = top2[:, 1] - top2[:, 0]
    return entropies, margins
