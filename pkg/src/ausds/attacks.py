"""Adversarial attacks that project labeled latent points toward the
decision boundary.

Three methods: one-step fast gradient value (FGV), iterative DeepFool with
final overshoot, and the optimization-based penalty attack (C&W) in its
untargeted form. Success is never trusted from the attack loop: every point
is re-checked by comparing decoder predictions at the anchor and the result.

Only FGV applies to sequence labeling (the gradient is taken w.r.t. a
perturbation shared by all token latents); the iterative attacks require a
plain classification decoder.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NumericError, StalenessError
from .model import DecoderModel, _forward_backward, loss_and_input_grad

FGV = "fgv"
DEEPFOOL = "deepfool"
CW = "cw"

FGV_LINE_SEARCH_SCALES = (0.25, 0.5, 1.0, 2.0, 4.0)


@dataclass
class AttackConfig:
    method: str = FGV
    fgv_scale: float = 0.5
    fgv_line_search: bool = False
    deepfool_max_iter: int = 50
    deepfool_overshoot: float = 0.02
    cw_constant: float = 1.0
    cw_steps: int = 100
    cw_step_size: float = 0.05

    def validate(self) -> None:
        if self.method not in (FGV, DEEPFOOL, CW):
            raise ConfigurationError(f"unknown attack method {self.method!r}")
        if self.fgv_scale < 0:
            raise ConfigurationError("fgv scale must be >= 0")
        if self.deepfool_max_iter < 0:
            raise ConfigurationError("deepfool max_iter must be >= 0")
        if self.cw_constant <= 0:
            raise ConfigurationError("cw constant must be > 0")


@dataclass
class AdversarialPoint:
    origin_id: int
    x_prime: np.ndarray
    perturbation_norm: float
    success: bool
    iterations: int
    version: int = 0
    pre_overshoot: np.ndarray | None = None
    objective_trace: list[float] = field(default_factory=list)


@dataclass
class AttackItem:
    """One labeled anchor: pooled latent, its label, optional token latents."""

    origin_id: int
    version: int
    x: np.ndarray
    y: object
    tokens: np.ndarray | None = None


def _finish(
    decoder: DecoderModel,
    origin_id: int,
    version: int,
    anchor: np.ndarray,
    x_prime: np.ndarray,
    iterations: int,
    pre_overshoot: np.ndarray | None = None,
    objective_trace: list[float] | None = None,
) -> AdversarialPoint:
    """Build the result with re-checked success and recomputed norm.

    Labels come from two single-point evaluations so the check agrees with
    any later single-point prediction even when x' sits on a logit tie.
    """
    label_anchor = int(np.argmax(decoder.logits(anchor)))
    label_prime = int(np.argmax(decoder.logits(x_prime)))
    return AdversarialPoint(
        origin_id=origin_id,
        x_prime=x_prime,
        perturbation_norm=float(np.linalg.norm(x_prime - anchor)),
        success=label_anchor != label_prime,
        iterations=iterations,
        version=version,
        pre_overshoot=pre_overshoot,
        objective_trace=objective_trace or [],
    )


def fgv(
    decoder: DecoderModel,
    x: np.ndarray,
    y,
    config: AttackConfig,
    origin_id: int = -1,
    version: int = 0,
) -> AdversarialPoint:
    """One-step move along the cross-entropy input gradient, scaled by the
    configured step size. ``x`` may be a token matrix with a label sequence,
    in which case the anchor is the pooled latent.
    """
    x = np.asarray(x, dtype=np.float64)
    anchor = x if x.ndim == 1 else x.mean(axis=0)
    _, grad = loss_and_input_grad(decoder, x, y)
    grad_norm = float(np.linalg.norm(grad))
    if grad_norm == 0.0:
        return AdversarialPoint(origin_id, anchor.copy(), 0.0, False, 0, version)
    scales = FGV_LINE_SEARCH_SCALES if config.fgv_line_search else (config.fgv_scale,)
    chosen = anchor + config.fgv_scale * grad
    if config.fgv_line_search:
        origin_label = np.argmax(decoder.logits(anchor))
        for scale in scales:
            cand = anchor + scale * grad
            if np.argmax(decoder.logits(cand)) != origin_label:
                chosen = cand
                break
    return _finish(decoder, origin_id, version, anchor, chosen, 1)


def _logit_jacobian(decoder: DecoderModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Logits and their (out_dim, d) Jacobian at a single point.

    Logits go through the decoder's standard evaluation path so argmax
    decisions here agree bit-for-bit with every other single-point check.
    """
    z = decoder.logits(x)
    if decoder.architecture == "linear":
        W, _ = decoder.params
        J = W
    else:
        W1, b1, W2, _ = decoder.params
        a = np.tanh(W1 @ x + b1)
        J = (W2 * (1.0 - a * a)) @ W1
    return z, J


def deepfool(
    decoder: DecoderModel,
    x: np.ndarray,
    config: AttackConfig,
    origin_id: int = -1,
    version: int = 0,
) -> AdversarialPoint:
    """Iterative minimal-perturbation attack via repeated linearization of
    all class boundaries, with a final overshoot by (1 + eta)."""
    x0 = np.asarray(x, dtype=np.float64)
    if x0.ndim != 1:
        raise ConfigurationError("deepfool is not suitable for sequence labeling")
    eta = config.deepfool_overshoot
    z0, _ = _logit_jacobian(decoder, x0)
    origin_label = int(np.argmax(z0))
    r_total = np.zeros_like(x0)
    iterations = 0
    for _ in range(config.deepfool_max_iter):
        overshot = x0 + (1.0 + eta) * r_total
        if int(np.argmax(decoder.logits(overshot))) != origin_label:
            break
        current = x0 + r_total
        z, J = _logit_jacobian(decoder, current)
        if int(np.argmax(z)) != origin_label:
            break
        f = z - z[origin_label]
        w = J - J[origin_label]
        w_norms = np.linalg.norm(w, axis=1)
        others = [m for m in range(len(z)) if m != origin_label and w_norms[m] > 0]
        if not others:
            break
        ratios = np.abs(f[others]) / w_norms[others]
        target = others[int(np.argmin(ratios))]
        step = (np.abs(f[target]) / w_norms[target] ** 2) * w[target]
        if np.linalg.norm(step) <= 1e-12 * (1.0 + np.linalg.norm(x0)):
            r_total += step
            iterations += 1
            break
        r_total += step
        iterations += 1
    x_prime = x0 + (1.0 + eta) * r_total
    return _finish(
        decoder, origin_id, version, x0, x_prime, iterations, pre_overshoot=r_total.copy()
    )


def cw(
    decoder: DecoderModel,
    x: np.ndarray,
    config: AttackConfig,
    y: int | None = None,
    origin_id: int = -1,
    version: int = 0,
) -> AdversarialPoint:
    """Penalty-form attack: minimize squared distance plus a hinge on the
    anchor-label logit gap, by gradient descent with a monotone (backtracking)
    acceptance rule. Untargeted: any label flip zeroes the hinge.
    """
    x0 = np.asarray(x, dtype=np.float64)
    if x0.ndim != 1:
        raise ConfigurationError("cw is not suitable for sequence labeling")
    z0, _ = _logit_jacobian(decoder, x0)
    anchor_label = int(y) if y is not None else int(np.argmax(z0))
    c = config.cw_constant

    def objective(point: np.ndarray) -> tuple[float, float, bool]:
        z = decoder.logits(point)
        gap = z[anchor_label] - np.max(np.delete(z, anchor_label))
        flipped = int(np.argmax(z)) != anchor_label
        dist_sq = float(np.sum((point - x0) ** 2))
        return dist_sq + c * max(gap, 0.0), gap, flipped

    obj0, gap0, _ = objective(x0)
    if gap0 <= 0.0:
        # already past the boundary relative to the anchor label
        return _finish(decoder, origin_id, version, x0, x0.copy(), 0,
                       objective_trace=[obj0])

    current = x0.copy()
    obj_cur = obj0
    trace = [obj_cur]
    step = config.cw_step_size
    best_flip: tuple[float, np.ndarray] | None = None
    iterations = 0
    for _ in range(config.cw_steps):
        iterations += 1
        z, J = _logit_jacobian(decoder, current)
        if not np.isfinite(z).all():
            raise NumericError("non-finite objective in cw attack")
        gap = z[anchor_label] - np.max(np.delete(z, anchor_label))
        grad = 2.0 * (current - x0)
        if gap > 0.0:
            rival = int(np.argmax(np.delete(z, anchor_label)))
            rival = rival if rival < anchor_label else rival + 1
            grad = grad + c * (J[anchor_label] - J[rival])
        candidate = current - step * grad
        obj_cand, _, flipped = objective(candidate)
        if obj_cand <= obj_cur:
            current = candidate
            obj_cur = obj_cand
            trace.append(obj_cur)
            step = min(step * 1.25, config.cw_step_size * 16)
            if flipped:
                dist = float(np.linalg.norm(candidate - x0))
                if best_flip is None or dist < best_flip[0]:
                    best_flip = (dist, candidate.copy())
        else:
            step *= 0.5
    final = best_flip[1] if best_flip is not None else current
    return _finish(decoder, origin_id, version, x0, final, iterations,
                   objective_trace=trace)


def _fgv_batch_fast(
    decoder: DecoderModel, items: list[AttackItem], config: AttackConfig
) -> list[AdversarialPoint]:
    """Vectorized FGV over a classification batch (same math as ``fgv``)."""
    X = np.stack([np.asarray(it.x, dtype=np.float64) for it in items])
    Y = np.asarray([int(it.y) for it in items], dtype=np.int64)
    _, _, grads = _forward_backward(decoder, X, Y, np.ones(len(items)))
    grad_norms = np.linalg.norm(grads, axis=1)
    origin_labels = np.argmax(decoder.logits(X), axis=1)

    scales = FGV_LINE_SEARCH_SCALES if config.fgv_line_search else ()
    chosen = X + config.fgv_scale * grads
    if config.fgv_line_search:
        pending = grad_norms > 0
        for scale in scales:
            if not pending.any():
                break
            cand = X[pending] + scale * grads[pending]
            flipped = np.argmax(decoder.logits(cand), axis=1) != origin_labels[pending]
            idx = np.flatnonzero(pending)
            hit = idx[flipped]
            chosen[hit] = cand[flipped]
            pending[hit] = False

    final_labels = np.argmax(decoder.logits(chosen), axis=1)
    out = []
    for row, item in enumerate(items):
        if grad_norms[row] == 0.0:
            out.append(AdversarialPoint(item.origin_id, X[row].copy(), 0.0, False, 0,
                                        item.version))
            continue
        out.append(
            AdversarialPoint(
                origin_id=item.origin_id,
                x_prime=chosen[row],
                perturbation_norm=float(np.linalg.norm(chosen[row] - X[row])),
                success=bool(final_labels[row] != origin_labels[row]),
                iterations=1,
                version=item.version,
            )
        )
    return out


def attack_batch(
    decoder: DecoderModel, items: list[AttackItem], config: AttackConfig
) -> list[AdversarialPoint]:
    """Apply the configured attack pointwise, preserving input order.

    Failed points are kept with ``success=False`` so callers can skip them.
    All items must carry the same encoder version.
    """
    config.validate()
    if not items:
        return []
    versions = {it.version for it in items}
    if len(versions) > 1:
        raise StalenessError(f"mixed encoder versions in attack batch: {sorted(versions)}")
    has_tokens = any(it.tokens is not None for it in items)
    if has_tokens and config.method != FGV:
        raise ConfigurationError(f"{config.method} is not suitable for sequence labeling")

    if config.method == FGV and not has_tokens:
        return _fgv_batch_fast(decoder, items, config)

    out = []
    for item in items:
        if config.method == FGV:
            payload = item.tokens if item.tokens is not None else item.x
            out.append(fgv(decoder, payload, item.y, config, item.origin_id, item.version))
        elif config.method == DEEPFOOL:
            out.append(deepfool(decoder, item.x, config, item.origin_id, item.version))
        else:
            out.append(cw(decoder, item.x, config, int(item.y), item.origin_id, item.version))
    return out
