"""Discrete bijective mapper between unlabeled sample ids and their latent
points, with exact k-nearest-neighbor retrieval.

The index stores latents as float32 (the same quantization that keys the
inverse hash map) in cell-major order. Cells come from recursive median
splits along seeded random directions; queries prune cells with the triangle
inequality, so results are identical to a full scan while typically touching
only the cells near the query. Distances are accumulated in float64, ties
break toward the smaller id.

Removals only flip a liveness mask; the mapper is rebuilt from scratch after
every encoder update anyway.
"""

from __future__ import annotations

import logging
import time

import numpy as np

from .encoder import EncoderStack
from .errors import ConfigurationError, StalenessError

log = logging.getLogger(__name__)

FLAT_THRESHOLD = 2048  # below this, one scan beats cell bookkeeping
TARGET_CELL_SIZE = 1024
_SPLIT_SEED = 0x5EED


def _partition_rows(vectors: np.ndarray, target: int, seed: int) -> list[np.ndarray]:
    """Recursive median split into balanced contiguous leaves."""
    rng = np.random.default_rng(seed)
    leaves: list[np.ndarray] = []
    stack = [np.arange(vectors.shape[0], dtype=np.int64)]
    while stack:
        idx = stack.pop()
        if len(idx) <= target:
            leaves.append(idx)
            continue
        direction = rng.standard_normal(vectors.shape[1])
        direction /= np.linalg.norm(direction)
        proj = vectors[idx] @ direction
        half = len(idx) // 2
        order = np.argpartition(proj, half)
        stack.append(idx[order[half:]])
        stack.append(idx[order[:half]])
    return leaves


class LatentMapper:
    """Forward id -> latent and inverse latent -> id over the unlabeled pool."""

    def __init__(
        self,
        ids: np.ndarray,
        vectors: np.ndarray,
        encoder_version: int,
        total_ids: int,
        mode: str = "auto",
    ):
        order = np.argsort(ids)
        self.ids = np.asarray(ids, dtype=np.int64)[order]
        vectors = np.asarray(vectors)[order]
        self.encoder_version = int(encoder_version)
        self.build_seconds = 0.0

        n = len(self.ids)
        if mode not in ("auto", "flat", "cells"):
            raise ConfigurationError(f"unknown index mode {mode!r}")
        use_cells = mode == "cells" or (mode == "auto" and n >= FLAT_THRESHOLD)

        if use_cells and n > 0:
            leaves = _partition_rows(vectors, TARGET_CELL_SIZE, _SPLIT_SEED)
            perm = np.concatenate(leaves)
            bounds = np.cumsum([0] + [len(leaf) for leaf in leaves])
            self.vectors = np.ascontiguousarray(vectors[perm], dtype=np.float32)
            self.ids = self.ids[perm]
            self.cell_bounds = bounds.astype(np.int64)
            centroids = np.empty((len(leaves), vectors.shape[1]), dtype=np.float64)
            radii = np.empty(len(leaves), dtype=np.float64)
            for j in range(len(leaves)):
                block = self.vectors[bounds[j] : bounds[j + 1]].astype(np.float64)
                centroids[j] = block.mean(axis=0)
                radii[j] = np.sqrt(((block - centroids[j]) ** 2).sum(axis=1).max())
            self.centroids = centroids
            self.radii = radii
        else:
            self.vectors = np.ascontiguousarray(vectors, dtype=np.float32)
            self.cell_bounds = None
            self.centroids = None
            self.radii = None

        self.norms_sq = (self.vectors.astype(np.float64) ** 2).sum(axis=1)
        self.alive = np.ones(n, dtype=bool)
        self.live_count = n
        self.row_of_id = np.full(total_ids, -1, dtype=np.int64)
        self.row_of_id[self.ids] = np.arange(n)
        self._inverse: dict[bytes, int] | None = None

    @property
    def size(self) -> int:
        return self.live_count

    @property
    def inverse(self) -> dict[bytes, int]:
        """latent bit pattern -> id, built on first use."""
        if self._inverse is None:
            inv: dict[bytes, int] = {}
            for sample_id in np.sort(self.ids):
                key = self.vectors[self.row_of_id[sample_id]].tobytes()
                if key in inv:
                    log.warning("duplicate latent for ids %d and %d; inverse keeps the first",
                                inv[key], sample_id)
                else:
                    inv[key] = int(sample_id)
            self._inverse = inv
        return self._inverse

    def _row(self, sample_id: int) -> int:
        sample_id = int(sample_id)
        if not 0 <= sample_id < len(self.row_of_id):
            return -1
        return int(self.row_of_id[sample_id])

    def latent_of(self, sample_id: int) -> np.ndarray:
        """Forward map: the indexed (float32-quantized) latent of an id."""
        row = self._row(sample_id)
        if row < 0 or not self.alive[row]:
            raise KeyError(f"id {sample_id} is not in the mapper")
        return self.vectors[row]

    def id_of(self, vector: np.ndarray) -> int | None:
        """Inverse map via the float32 bit pattern of the vector."""
        key = np.ascontiguousarray(vector, dtype=np.float32).tobytes()
        return self.inverse.get(key)

    def live_ids(self) -> np.ndarray:
        return np.sort(self.ids[self.alive])

    def remove(self, ids) -> "LatentMapper":
        """Drop ids from retrieval. Absent ids are a warning, not an error."""
        for sample_id in ids:
            row = self._row(sample_id)
            if row < 0 or not self.alive[row]:
                log.warning("remove: id %s not present in mapper", sample_id)
                continue
            self.alive[row] = False
            self.live_count -= 1
        return self

    def _scan_rows(self, start: int, stop: int, q: np.ndarray, q_norm: float) -> np.ndarray:
        """Exact squared distances from q to rows [start, stop), inf for dead."""
        block = self.vectors[start:stop]
        d2 = self.norms_sq[start:stop] - 2.0 * (block @ q) + q_norm
        np.maximum(d2, 0.0, out=d2)
        dead = ~self.alive[start:stop]
        if dead.any():
            d2[dead] = np.inf
        return d2

    def _query_one(self, q: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        q = np.asarray(q, dtype=np.float64)
        q_norm = float(q @ q)
        n = len(self.ids)
        if self.cell_bounds is None:
            d2 = self._scan_rows(0, n, q, q_norm)
            return self._top_k(d2, np.arange(n), k)

        center_d = np.sqrt(
            np.maximum((self.centroids * self.centroids).sum(axis=1)
                       - 2.0 * (self.centroids @ q) + q_norm, 0.0)
        )
        lb = np.maximum(center_d - self.radii, 0.0)
        lb_sq = lb * lb

        # first pass: nearest cell gives a pruning threshold
        best_cell = int(np.argmin(lb_sq))
        start, stop = self.cell_bounds[best_cell], self.cell_bounds[best_cell + 1]
        d2 = self._scan_rows(start, stop, q, q_norm)
        finite = np.isfinite(d2)
        if finite.sum() >= k:
            threshold = np.partition(d2, k - 1)[k - 1]
        else:
            threshold = np.inf

        keep = lb_sq <= threshold * (1.0 + 1e-9) + 1e-12
        keep[best_cell] = True
        cells = np.flatnonzero(keep)

        # merge adjacent kept cells into contiguous ranges to cut call count
        ranges: list[tuple[int, int]] = []
        for cell in cells:
            s, e = int(self.cell_bounds[cell]), int(self.cell_bounds[cell + 1])
            if ranges and ranges[-1][1] == s:
                ranges[-1] = (ranges[-1][0], e)
            else:
                ranges.append((s, e))
        dist_parts = []
        row_parts = []
        for s, e in ranges:
            dist_parts.append(self._scan_rows(s, e, q, q_norm))
            row_parts.append(np.arange(s, e))
        return self._top_k(np.concatenate(dist_parts), np.concatenate(row_parts), k)

    def _top_k(self, d2: np.ndarray, rows: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        finite = np.isfinite(d2)
        d2 = d2[finite]
        rows = rows[finite]
        k_eff = min(k, len(rows))
        if k_eff == 0:
            return np.empty(0, dtype=np.int64), np.empty(0)
        if len(rows) > k_eff:
            part = np.argpartition(d2, k_eff - 1)[:k_eff]
            # re-include exact ties with the cut so id ordering stays global
            cut = d2[part].max()
            tied = np.flatnonzero(d2 <= cut)
            d2, rows = d2[tied], rows[tied]
        cand_ids = self.ids[rows]
        order = np.lexsort((cand_ids, d2))[:k_eff]
        return cand_ids[order], d2[order]

    def query(
        self, points, k: int, version: int | None = None, return_distances: bool = False
    ):
        """Exact k nearest live ids per query point, distance then id order."""
        if k < 1:
            raise ConfigurationError("k must be >= 1")
        if version is not None and version != self.encoder_version:
            raise StalenessError(
                f"query latents at version {version}, mapper at {self.encoder_version}"
            )
        ids_out = []
        dists_out = []
        for q in points:
            ids, d2 = self._query_one(q, k)
            ids_out.append(ids)
            dists_out.append(np.sqrt(d2))
        if return_distances:
            return ids_out, dists_out
        return ids_out


def build_mapper(
    stack: EncoderStack, unlabeled_ids: np.ndarray, mode: str = "auto"
) -> LatentMapper:
    """Encode every unlabeled id at the current stack version and index it."""
    t0 = time.perf_counter()
    ids = np.asarray(unlabeled_ids, dtype=np.int64)
    if len(ids):
        vectors = stack.encode_many(ids).astype(np.float32)
    else:
        vectors = np.empty((0, stack.dim), dtype=np.float32)
    mapper = LatentMapper(ids, vectors, stack.version, stack.store.count, mode=mode)
    mapper.build_seconds = time.perf_counter() - t0
    return mapper
