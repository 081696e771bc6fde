"""Two-stage encoder: frozen file-backed base embeddings behind a trainable
affine adapter.

The adapter starts as the identity, so version 1 of the latent space equals
the exported base space. Fine-tuning jointly trains the adapter and the
decoder and bumps the stack version exactly once, which invalidates every
latent point and mapper built earlier.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import ConfigurationError, NumericError, ShapeError, StalenessError
from .model import DecoderModel, TrainConfig, _forward_backward, make_optimizer


@dataclass
class LatentPoint:
    """A vector in the current latent space, tagged with its encoder version."""

    vector: np.ndarray
    version: int
    sample_id: int | None = None


class EmbeddingStore:
    """Base vectors (and token vectors for labeling) for one corpus."""

    def __init__(
        self,
        vectors: np.ndarray,
        token_flat: np.ndarray | None = None,
        token_offsets: np.ndarray | None = None,
    ):
        self.vectors = np.asarray(vectors)
        if self.vectors.ndim != 2:
            raise ShapeError(f"store needs a (count, dim) matrix, got {self.vectors.shape}")
        if not np.isfinite(self.vectors).all():
            raise NumericError("store holds non-finite base vectors")
        self.token_flat = token_flat
        self.token_offsets = token_offsets

    @classmethod
    def from_dataset(cls, dataset: Dataset) -> "EmbeddingStore":
        return cls(dataset.vectors, dataset.token_flat, dataset.token_offsets)

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def has_tokens(self) -> bool:
        return self.token_flat is not None

    def tokens(self, sample_id: int) -> np.ndarray:
        off = self.token_offsets
        return self.token_flat[off[sample_id] : off[sample_id + 1]]


class EncoderStack:
    """Store plus affine adapter ``x -> A x + b`` with a version counter."""

    def __init__(self, store: EmbeddingStore):
        self.store = store
        d = store.dim
        self.adapter_matrix = np.eye(d, dtype=np.float64)
        self.adapter_bias = np.zeros(d, dtype=np.float64)
        self.version = 1

    @property
    def dim(self) -> int:
        return self.store.dim

    def assert_fresh(self, version: int) -> None:
        if version != self.version:
            raise StalenessError(
                f"latent version {version} is stale; encoder is at {self.version}"
            )

    def _check_id(self, sample_id: int) -> None:
        if not 0 <= sample_id < self.store.count:
            raise KeyError(f"unknown sample id {sample_id}")

    def apply_adapter(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return x @ self.adapter_matrix.T + self.adapter_bias

    def encode(self, sample_id: int) -> LatentPoint:
        """Latent point of one sample at the current version.

        Classification uses the adapted base vector; labeling adapts each
        token and mean-pools (the adapter is affine, so this equals adapting
        the token mean).
        """
        self._check_id(sample_id)
        if self.store.has_tokens:
            base = self.store.tokens(sample_id).astype(np.float64).mean(axis=0)
        else:
            base = self.store.vectors[sample_id].astype(np.float64)
        return LatentPoint(self.apply_adapter(base), self.version, sample_id)

    def encode_tokens(self, sample_id: int) -> np.ndarray:
        """Per-token latents (n_tokens, d) for the tagger."""
        self._check_id(sample_id)
        if not self.store.has_tokens:
            raise ConfigurationError("store has no token vectors")
        return self.apply_adapter(self.store.tokens(sample_id).astype(np.float64))

    def encode_many(self, ids: np.ndarray) -> np.ndarray:
        """Pooled latents for many ids as one (n, d) float64 matrix."""
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.store.count):
            raise KeyError("id outside store")
        if self.store.has_tokens:
            base = _pooled_base(self.store, ids)
        else:
            base = self.store.vectors[ids].astype(np.float64)
        return self.apply_adapter(base)


def _pooled_base(store: EmbeddingStore, ids: np.ndarray) -> np.ndarray:
    out = np.empty((len(ids), store.dim), dtype=np.float64)
    for row, sample_id in enumerate(ids):
        out[row] = store.tokens(int(sample_id)).astype(np.float64).mean(axis=0)
    return out


def fine_tune(
    stack: EncoderStack,
    decoder: DecoderModel,
    labeled: list[tuple[int, object]],
    steps: int,
    config: TrainConfig,
) -> tuple[EncoderStack, DecoderModel]:
    """Jointly train the adapter and decoder on the labeled set for ``steps``
    optimizer steps, then bump the stack version exactly once.

    On a non-finite loss the stack and decoder are restored and the version
    is left unchanged.
    """
    if steps < 0:
        raise ConfigurationError("fine-tune steps must be >= 0")
    if not labeled:
        raise ConfigurationError("fine-tune needs a non-empty labeled set")
    config.validate()

    saved_adapter = (stack.adapter_matrix.copy(), stack.adapter_bias.copy())
    saved_decoder = [p.copy() for p in decoder.params]
    params = [stack.adapter_matrix, stack.adapter_bias, *decoder.params]
    optimizer = make_optimizer(config)
    rng = np.random.default_rng(config.seed)
    ids = np.asarray([i for i, _ in labeled], dtype=np.int64)
    labels = [lab for _, lab in labeled]

    try:
        for _ in range(steps):
            take = min(config.batch_size, len(ids))
            batch = rng.choice(len(ids), size=take, replace=len(ids) < config.batch_size)
            if stack.store.has_tokens:
                base_blocks = [stack.store.tokens(int(ids[j])).astype(np.float64) for j in batch]
                base = np.concatenate(base_blocks, axis=0)
                y = np.concatenate([np.asarray(labels[j], dtype=np.int64) for j in batch])
                weights = np.concatenate(
                    [np.full(len(b), 1.0 / take) for b in base_blocks]
                )
            else:
                base = stack.store.vectors[ids[batch]].astype(np.float64)
                y = np.asarray([labels[j] for j in batch], dtype=np.int64)
                weights = np.full(take, 1.0 / take)
            latent = base @ stack.adapter_matrix.T + stack.adapter_bias
            loss, dec_grads, input_grads = _forward_backward(decoder, latent, y, weights)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite fine-tune loss {loss}")
            adapter_grads = [input_grads.T @ base, input_grads.sum(axis=0)]
            optimizer.step(params, adapter_grads + dec_grads)
    except NumericError:
        stack.adapter_matrix[...], stack.adapter_bias[...] = saved_adapter
        for p, saved in zip(decoder.params, saved_decoder):
            p[...] = saved
        raise

    stack.version += 1
    return stack, decoder
