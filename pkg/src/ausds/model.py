"""Softmax decoder over the latent space, with exact input and parameter gradients.

Two architectures: a single linear softmax layer, and one tanh hidden layer
followed by a linear softmax. The same model doubles as a per-token tagger
for sequence labeling; sequence losses sum per-token cross entropy, so the
gradient w.r.t. a perturbation shared by every token is the sum of the
per-token input gradients.

All math is float64 and natural-log based. Models count how many rows they
evaluate, which the benchmark harness uses to verify strategy cost contracts.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, FormatError, NumericError, ShapeError

LINEAR = "linear"
MLP = "mlp"

ADEC_MAGIC = b"ADEC"
ADEC_VERSION = 1
_ARCH_CODES = {LINEAR: 0, MLP: 1}
_ARCH_NAMES = {v: k for k, v in _ARCH_CODES.items()}


@dataclass
class TrainConfig:
    optimizer: str = "adam"  # "sgd" | "adam"
    learning_rate: float = 1e-3
    batch_size: int = 32
    seed: int = 0

    def validate(self) -> None:
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")
        if self.learning_rate < 0:
            raise ConfigurationError("learning rate must be >= 0")
        if self.batch_size < 1:
            raise ConfigurationError("batch size must be >= 1")


class DecoderModel:
    """Parameters of the decoder plus an evaluation counter."""

    def __init__(self, architecture: str, params: list[np.ndarray]):
        if architecture not in (LINEAR, MLP):
            raise ConfigurationError(f"unknown architecture {architecture!r}")
        self.architecture = architecture
        self.params = [np.asarray(p, dtype=np.float64) for p in params]
        self.eval_count = 0

    @classmethod
    def create(
        cls,
        architecture: str,
        in_dim: int,
        out_dim: int,
        hidden_width: int = 32,
        seed: int = 0,
    ) -> "DecoderModel":
        if out_dim < 2:
            raise ConfigurationError("decoder needs at least 2 output classes")
        rng = np.random.default_rng(seed)
        if architecture == LINEAR:
            params = [
                rng.normal(0.0, 1.0 / np.sqrt(in_dim), size=(out_dim, in_dim)),
                np.zeros(out_dim),
            ]
        elif architecture == MLP:
            params = [
                rng.normal(0.0, 1.0 / np.sqrt(in_dim), size=(hidden_width, in_dim)),
                np.zeros(hidden_width),
                rng.normal(0.0, 1.0 / np.sqrt(hidden_width), size=(out_dim, hidden_width)),
                np.zeros(out_dim),
            ]
        else:
            raise ConfigurationError(f"unknown architecture {architecture!r}")
        return cls(architecture, params)

    @property
    def in_dim(self) -> int:
        return self.params[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.params[-1].shape[0]

    @property
    def parameter_count(self) -> int:
        return sum(p.size for p in self.params)

    def copy(self) -> "DecoderModel":
        return DecoderModel(self.architecture, [p.copy() for p in self.params])

    def _as_matrix(self, x: np.ndarray) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"expected (*, {self.in_dim}) inputs, got {x.shape}")
        return x, single

    def logits(self, x: np.ndarray) -> np.ndarray:
        """Raw scores, one row per input row. Counts evaluations."""
        X, single = self._as_matrix(x)
        self.eval_count += X.shape[0]
        with np.errstate(over="ignore", invalid="ignore"):
            if self.architecture == LINEAR:
                W, b = self.params
                Z = X @ W.T + b
            else:
                W1, b1, W2, b2 = self.params
                Z = np.tanh(X @ W1.T + b1) @ W2.T + b2
        if not np.isfinite(Z).all():
            raise NumericError("non-finite logits")
        return Z[0] if single else Z

    def save(self, path) -> None:
        """Serialize to the versioned binary checkpoint layout."""
        with open(path, "wb") as fh:
            fh.write(ADEC_MAGIC)
            fh.write(struct.pack("<II", ADEC_VERSION, _ARCH_CODES[self.architecture]))
            fh.write(struct.pack("<I", len(self.params)))
            for p in self.params:
                fh.write(struct.pack("<I", p.ndim))
                fh.write(struct.pack(f"<{p.ndim}I", *p.shape))
            for p in self.params:
                fh.write(np.ascontiguousarray(p, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path) -> "DecoderModel":
        with open(path, "rb") as fh:
            if fh.read(4) != ADEC_MAGIC:
                raise FormatError(f"{path}: not a decoder checkpoint")
            version, arch = struct.unpack("<II", fh.read(8))
            if version != ADEC_VERSION:
                raise FormatError(f"{path}: unsupported checkpoint version {version}")
            (count,) = struct.unpack("<I", fh.read(4))
            shapes = []
            for _ in range(count):
                (ndim,) = struct.unpack("<I", fh.read(4))
                shapes.append(struct.unpack(f"<{ndim}I", fh.read(4 * ndim)))
            params = []
            for shape in shapes:
                size = int(np.prod(shape))
                p = np.frombuffer(fh.read(4 * size), dtype="<f4").astype(np.float64)
                params.append(p.reshape(shape))
        return cls(_ARCH_NAMES[arch], params)


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def predict_proba(model: DecoderModel, x: np.ndarray) -> np.ndarray:
    """Class distribution per input row (per token for sequence inputs)."""
    return softmax(model.logits(x))


def predict_label(model: DecoderModel, x: np.ndarray) -> np.ndarray | int:
    z = model.logits(x)
    return int(np.argmax(z)) if z.ndim == 1 else np.argmax(z, axis=1)


def margin(model: DecoderModel, x: np.ndarray) -> float | np.ndarray:
    """Difference between the largest and second-largest output probabilities."""
    if model.out_dim < 2:
        raise ConfigurationError("margin needs at least 2 classes")
    p = predict_proba(model, x)
    top2 = np.sort(p, axis=-1)[..., -2:]
    result = top2[..., 1] - top2[..., 0]
    return float(result) if np.ndim(result) == 0 else result


def _forward_backward(
    model: DecoderModel, X: np.ndarray, Y: np.ndarray, weights: np.ndarray
) -> tuple[float, list[np.ndarray], np.ndarray]:
    """Weighted cross-entropy loss with parameter and input gradients.

    Loss is sum_i weights[i] * CE(row i); gradients are exact.
    """
    Y = np.asarray(Y, dtype=np.int64)
    if Y.ndim != 1 or Y.shape[0] != X.shape[0]:
        raise ShapeError(f"labels shaped {Y.shape} for {X.shape[0]} inputs")
    if (Y < 0).any() or (Y >= model.out_dim).any():
        raise IndexError(f"label outside [0, {model.out_dim})")

    if model.architecture == LINEAR:
        W, b = model.params
        Z = X @ W.T + b
        P = softmax(Z)
        rows = np.arange(X.shape[0])
        losses = -np.log(np.maximum(P[rows, Y], 1e-300))
        loss = float(weights @ losses)
        delta = (P - np.eye(model.out_dim)[Y]) * weights[:, None]
        grads = [delta.T @ X, delta.sum(axis=0)]
        input_grads = delta @ W
    else:
        W1, b1, W2, b2 = model.params
        Z1 = X @ W1.T + b1
        A = np.tanh(Z1)
        Z = A @ W2.T + b2
        P = softmax(Z)
        rows = np.arange(X.shape[0])
        losses = -np.log(np.maximum(P[rows, Y], 1e-300))
        loss = float(weights @ losses)
        delta = (P - np.eye(model.out_dim)[Y]) * weights[:, None]
        dA = delta @ W2
        dZ1 = dA * (1.0 - A * A)
        grads = [dZ1.T @ X, dZ1.sum(axis=0), delta.T @ A, delta.sum(axis=0)]
        input_grads = dZ1 @ W1
    model.eval_count += X.shape[0]
    return loss, grads, input_grads


def loss_and_input_grad(
    model: DecoderModel, x: np.ndarray, y
) -> tuple[float, np.ndarray]:
    """Cross entropy at ``x`` and its exact gradient w.r.t. the input.

    For a token-matrix input with a label sequence, the loss sums per-token
    cross entropies and the gradient is the sum of per-token gradients (the
    exact gradient for a perturbation shared across tokens).
    """
    X, single = model._as_matrix(x)
    if single:
        Y = np.asarray([y], dtype=np.int64)
    else:
        Y = np.asarray(y, dtype=np.int64)
    loss, _, input_grads = _forward_backward(model, X, Y, np.ones(X.shape[0]))
    grad = input_grads[0] if single else input_grads.sum(axis=0)
    return loss, grad


def loss_and_param_grads(
    model: DecoderModel, X: np.ndarray, Y: np.ndarray, weights: np.ndarray | None = None
) -> tuple[float, list[np.ndarray]]:
    X, _ = model._as_matrix(X)
    if weights is None:
        weights = np.full(X.shape[0], 1.0 / X.shape[0])
    loss, grads, _ = _forward_backward(model, X, Y, np.asarray(weights, dtype=np.float64))
    return loss, grads


class SgdOptimizer:
    def __init__(self, learning_rate: float):
        self.learning_rate = float(learning_rate)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        for p, g in zip(params, grads):
            p -= self.learning_rate * g


class AdamOptimizer:
    def __init__(self, learning_rate: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.learning_rate = float(learning_rate)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: list[np.ndarray] | None = None
        self._v: list[np.ndarray] | None = None

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if self._m is None:
            self._m = [np.zeros_like(p) for p in params]
            self._v = [np.zeros_like(p) for p in params]
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p, g, m, v in zip(params, grads, self._m, self._v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1**self.t)
            v_hat = v / (1 - b2**self.t)
            p -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(config: TrainConfig) -> SgdOptimizer | AdamOptimizer:
    config.validate()
    if config.optimizer == "sgd":
        return SgdOptimizer(config.learning_rate)
    return AdamOptimizer(config.learning_rate)


def train_step(
    model: DecoderModel,
    batch_x: np.ndarray,
    batch_y: np.ndarray,
    optimizer: SgdOptimizer | AdamOptimizer,
    weights: np.ndarray | None = None,
) -> float:
    """One optimizer step on the mean batch loss; returns that loss.

    Parameters are untouched if the loss or any gradient is non-finite.
    """
    if np.size(batch_y) == 0:
        raise ConfigurationError("train_step needs a non-empty batch")
    loss, grads = loss_and_param_grads(model, batch_x, batch_y, weights)
    if not np.isfinite(loss) or any(not np.isfinite(g).all() for g in grads):
        raise NumericError(f"non-finite training loss {loss}")
    optimizer.step(model.params, grads)
    return loss
