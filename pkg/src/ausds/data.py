"""Dataset ingestion, labeled/unlabeled pool bookkeeping, and the oracle.

Sample ids are dense ``0..n-1`` in file order, so pools are tracked with a
boolean membership mask plus a label dict; hot paths never iterate Python
sets (iteration order would leak into selection logs).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, FormatError, PoolInvariantError
from .fileformats import (
    DatasetManifest,
    read_embeddings,
    read_labels,
    read_manifest,
    read_token_embeddings,
)

log = logging.getLogger(__name__)

CLASSIFICATION = "classification"
LABELING = "labeling"


@dataclass
class SampleRecord:
    """One item of the corpus as the strategies see it (gold stays hidden)."""

    id: int
    task: str
    base_repr: np.ndarray  # (d,) for classification, (n_tokens, d) for labeling
    gold: int | np.ndarray


class Dataset:
    """Columnar storage for one corpus: base vectors, gold labels, test split."""

    def __init__(
        self,
        name: str,
        task: str,
        num_classes: int,
        vectors: np.ndarray,
        gold: np.ndarray | list,
        token_flat: np.ndarray | None = None,
        token_offsets: np.ndarray | None = None,
        test_vectors: np.ndarray | None = None,
        test_gold: np.ndarray | list | None = None,
        test_token_flat: np.ndarray | None = None,
        test_token_offsets: np.ndarray | None = None,
    ):
        if task not in (CLASSIFICATION, LABELING):
            raise ConfigurationError(f"unknown task {task!r}")
        self.name = name
        self.task = task
        self.num_classes = int(num_classes)
        self.vectors = np.asarray(vectors, dtype=np.float32)
        self.gold = gold
        self.token_flat = token_flat
        self.token_offsets = token_offsets
        self.test_vectors = test_vectors
        self.test_gold = test_gold
        self.test_token_flat = test_token_flat
        self.test_token_offsets = test_token_offsets
        if self.vectors.ndim != 2:
            raise FormatError(f"vectors must be 2-D, got {self.vectors.shape}")
        if task == LABELING:
            if token_flat is None or token_offsets is None:
                raise ConfigurationError("labeling task needs token embeddings")
            for i in range(self.count):
                if self.token_length(i) != len(gold[i]):
                    raise FormatError(
                        f"sample {i}: {self.token_length(i)} tokens but "
                        f"{len(gold[i])} gold labels"
                    )

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def token_length(self, sample_id: int) -> int:
        off = self.token_offsets
        return int(off[sample_id + 1] - off[sample_id])

    def tokens(self, sample_id: int) -> np.ndarray:
        off = self.token_offsets
        return self.token_flat[off[sample_id] : off[sample_id + 1]]

    def test_tokens(self, sample_id: int) -> np.ndarray:
        off = self.test_token_offsets
        return self.test_token_flat[off[sample_id] : off[sample_id + 1]]

    def record(self, sample_id: int) -> SampleRecord:
        if not 0 <= sample_id < self.count:
            raise KeyError(f"unknown sample id {sample_id}")
        base = self.tokens(sample_id) if self.task == LABELING else self.vectors[sample_id]
        return SampleRecord(sample_id, self.task, base, self.gold[sample_id])

    def classes_present(self) -> np.ndarray:
        if self.task == CLASSIFICATION:
            return np.unique(np.asarray(self.gold))
        return np.unique(np.concatenate([np.asarray(g) for g in self.gold]))


class PoolState:
    """Labeled/unlabeled split of one dataset at loop step ``i``.

    Mutated only by the single loop thread; every mutation preserves
    disjointness and total count.
    """

    def __init__(self, total: int):
        self.total = int(total)
        self.labeled: dict[int, int | np.ndarray] = {}
        self.unlabeled_mask = np.ones(total, dtype=bool)
        self.step = 0

    @property
    def labeled_count(self) -> int:
        return len(self.labeled)

    @property
    def unlabeled_count(self) -> int:
        return self.total - len(self.labeled)

    @property
    def labeled_fraction(self) -> float:
        return len(self.labeled) / self.total

    def is_unlabeled(self, sample_id: int) -> bool:
        return bool(self.unlabeled_mask[sample_id])

    def unlabeled_ids(self) -> np.ndarray:
        """Sorted array of unlabeled ids (O(total); not for hot paths)."""
        return np.flatnonzero(self.unlabeled_mask)

    def labeled_ids(self) -> np.ndarray:
        return np.flatnonzero(~self.unlabeled_mask)

    def mark_labeled(self, sample_id: int, label) -> None:
        if not self.unlabeled_mask[sample_id]:
            raise PoolInvariantError(f"id {sample_id} is already labeled")
        self.unlabeled_mask[sample_id] = False
        self.labeled[int(sample_id)] = label

    def check_conservation(self) -> None:
        live = int(self.unlabeled_mask.sum())
        if live + len(self.labeled) != self.total:
            raise PoolInvariantError(
                f"pool leak: {live} unlabeled + {len(self.labeled)} labeled != {self.total}"
            )
        overlap = [i for i in self.labeled if self.unlabeled_mask[i]]
        if overlap:
            raise PoolInvariantError(f"ids in both pools: {overlap[:5]}")

    def sample_unlabeled(self, size: int, rng: np.random.Generator,
                         exclude: set[int] | None = None) -> np.ndarray:
        """Uniform draw without replacement from the unlabeled pool.

        Uses rejection sampling against the dense-id mask while the pool is
        large, falling back to an explicit id list when it thins out.
        """
        exclude = exclude or set()
        available = self.unlabeled_count - len(exclude)
        if available <= 0 or size <= 0:
            return np.empty(0, dtype=np.int64)
        size = min(size, available)
        if size * 4 > available or available * 8 < self.total:
            ids = self.unlabeled_ids()
            if exclude:
                keep = np.fromiter((i not in exclude for i in ids), dtype=bool, count=len(ids))
                ids = ids[keep]
            return np.sort(rng.choice(ids, size=size, replace=False))
        chosen: list[int] = []
        seen: set[int] = set()
        while len(chosen) < size:
            draw = rng.integers(0, self.total, size=2 * (size - len(chosen)))
            for v in draw:
                v = int(v)
                if self.unlabeled_mask[v] and v not in seen and v not in exclude:
                    seen.add(v)
                    chosen.append(v)
                    if len(chosen) == size:
                        break
        return np.sort(np.asarray(chosen, dtype=np.int64))


class Oracle:
    """Label source backed by the dataset's gold labels, with query accounting."""

    def __init__(self, dataset: Dataset):
        self._dataset = dataset
        self.query_count = 0

    def label(self, sample_id: int):
        if not 0 <= sample_id < self._dataset.count:
            raise KeyError(f"unknown sample id {sample_id}")
        self.query_count += 1
        return self._dataset.gold[sample_id]


def default_seed_fraction(count: int) -> float:
    """0.1% of the pool, bumped to 0.5% for small corpora."""
    return 0.001 if count >= 10_000 else 0.005


def make_initial_pool(
    dataset: Dataset, seed: int, seed_fraction: float | None = None
) -> tuple[PoolState, Oracle]:
    """Draw the seed labeled set uniformly at random and split the pool."""
    n = dataset.count
    fraction = default_seed_fraction(n) if seed_fraction is None else float(seed_fraction)
    if not 0 < fraction < 1:
        raise ConfigurationError(f"seed fraction must be in (0,1), got {fraction}")
    seed_size = int(np.floor(fraction * n + 0.5))
    classes = dataset.classes_present()
    minimum = max(2, len(classes)) if dataset.task == CLASSIFICATION else 2
    if seed_size < minimum:
        raise ConfigurationError(
            f"seed fraction {fraction} yields {seed_size} samples; "
            f"need at least {minimum}"
        )
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(n, size=seed_size, replace=False))
    pool = PoolState(n)
    oracle = Oracle(dataset)
    for sample_id in chosen:
        pool.labeled[int(sample_id)] = dataset.gold[sample_id]
        pool.unlabeled_mask[sample_id] = False
    if dataset.task == CLASSIFICATION:
        drawn = np.unique(np.asarray([dataset.gold[i] for i in chosen]))
        missing = np.setdiff1d(classes, drawn)
        if missing.size:
            log.warning("seed set misses classes %s entirely", missing.tolist())
    pool.check_conservation()
    return pool, oracle


def load_dataset(
    manifest: DatasetManifest | str | Path,
    seed: int,
    seed_fraction: float | None = None,
    mmap: bool = False,
) -> tuple[Dataset, PoolState, Oracle]:
    """Load the files named by a manifest and draw the initial pools."""
    if not isinstance(manifest, DatasetManifest):
        manifest_path = Path(manifest)
        base = manifest_path.parent
        manifest = read_manifest(manifest_path)
    else:
        base = Path(".")

    vectors = read_embeddings(manifest.resolve("embeddings_path", base), mmap=mmap)
    if vectors.shape != (manifest.count, manifest.dim):
        raise FormatError(
            f"embeddings are {vectors.shape}, manifest promises "
            f"({manifest.count}, {manifest.dim})"
        )
    label_map = read_labels(manifest.resolve("labels_path", base))
    if len(label_map) != manifest.count:
        raise FormatError(
            f"labels file has {len(label_map)} rows, manifest promises {manifest.count}"
        )
    if sorted(label_map) != list(range(manifest.count)):
        raise FormatError("label ids are not dense 0..n-1")

    token_flat = token_offsets = None
    if manifest.task == LABELING:
        token_path = manifest.resolve("token_embeddings_path", base)
        if token_path is None:
            raise FormatError("labeling manifest lacks a token embedding file")
        token_flat, token_offsets = read_token_embeddings(token_path)
        gold = [np.asarray(label_map[i], dtype=np.int64) for i in range(manifest.count)]
    else:
        gold = np.asarray([int(label_map[i]) for i in range(manifest.count)], dtype=np.int64)

    test_vectors = test_gold = None
    test_token_flat = test_token_offsets = None
    if manifest.test_embeddings_path is not None:
        test_vectors = read_embeddings(manifest.resolve("test_embeddings_path", base))
        test_map = read_labels(manifest.resolve("test_labels_path", base))
        if manifest.task == CLASSIFICATION:
            test_gold = np.asarray([int(test_map[i]) for i in range(len(test_map))], dtype=np.int64)
        else:
            test_gold = [np.asarray(test_map[i], dtype=np.int64) for i in range(len(test_map))]
            test_token_path = manifest.resolve("test_token_embeddings_path", base)
            if test_token_path is not None:
                test_token_flat, test_token_offsets = read_token_embeddings(test_token_path)

    dataset = Dataset(
        name=manifest.name,
        task=manifest.task,
        num_classes=manifest.num_classes,
        vectors=vectors,
        gold=gold,
        token_flat=token_flat,
        token_offsets=token_offsets,
        test_vectors=test_vectors,
        test_gold=test_gold,
        test_token_flat=test_token_flat,
        test_token_offsets=test_token_offsets,
    )
    pool, oracle = make_initial_pool(dataset, seed, seed_fraction)
    return dataset, pool, oracle


def commit_selection(pool: PoolState, ids, oracle: Oracle) -> list[tuple[int, object]]:
    """Label ``ids`` via the oracle and move them into the labeled pool.

    Returns the freshly labeled (id, label) pairs in id order. The pool is
    updated in place; conservation is re-checked after every commit.
    """
    fresh: list[tuple[int, object]] = []
    for sample_id in sorted(int(i) for i in ids):
        if not pool.is_unlabeled(sample_id):
            raise PoolInvariantError(f"id {sample_id} is not in the unlabeled pool")
        label = oracle.label(sample_id)
        pool.mark_labeled(sample_id, label)
        fresh.append((sample_id, label))
    if fresh:
        pool.step += 1
    pool.check_conservation()
    return fresh
