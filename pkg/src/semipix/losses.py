"""Loss functions with closed-form gradients, all in float64.

Gradient conventions: cross_entropy differentiates with respect to the
logits; the contrastive losses differentiate with respect to the anchor
vectors only. Positives and negatives are treated as constants, matching a
setup where they come from a frozen teacher while anchors come from the
student.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .tensors import IGNORE


@dataclass
class LossOutput:
    """Scalar loss value plus gradients keyed by input name."""

    value: float
    grads: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass(frozen=True)
class LossWeights:
    """Mixing weights for the composite objective."""

    unsup_weight: float = 1.0
    contrastive_weight: float = 0.1
    temperature: float = 0.5

    def __post_init__(self):
        if self.unsup_weight < 0.0:
            raise ValueError(f"unsup_weight must be non-negative, got {self.unsup_weight}")
        if self.contrastive_weight < 0.0:
            raise ValueError(
                f"contrastive_weight must be non-negative, got {self.contrastive_weight}"
            )
        if self.temperature <= 0.0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")


def cross_entropy(logits: np.ndarray, targets: np.ndarray) -> LossOutput:
    """Softmax cross-entropy averaged over pixels whose target is not IGNORE.

    logits: [P, C] float; targets: [P] int with entries in [0, C) or IGNORE.
    The gradient is (softmax - onehot) / valid_count on valid rows and zero
    elsewhere. When every target is IGNORE the loss is 0 with zero gradient.
    """
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets)
    if logits.ndim != 2:
        raise ValueError(f"logits must be [P, C], got shape {logits.shape}")
    if targets.shape != (logits.shape[0],):
        raise ValueError(
            f"targets shape {targets.shape} does not match {logits.shape[0]} rows"
        )
    num_classes = logits.shape[1]
    if targets.size and (targets.min() < IGNORE or targets.max() >= num_classes):
        raise ValueError(f"targets must lie in [{IGNORE}, {num_classes})")

    grad = np.zeros_like(logits)
    valid = targets != IGNORE
    count = int(valid.sum())
    if count == 0:
        return LossOutput(0.0, {"logits": grad})

    rows = logits[valid]
    shifted = rows - rows.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    picked = targets[valid].astype(np.int64)
    log_probs = shifted[np.arange(count), picked] - log_norm
    value = -log_probs.sum() / count

    softmax = np.exp(shifted - log_norm[:, None])
    softmax[np.arange(count), picked] -= 1.0
    grad[valid] = softmax / count
    return LossOutput(float(value), {"logits": grad})


def _unit(vector: np.ndarray) -> tuple[np.ndarray, float]:
    norm = float(np.linalg.norm(vector))
    if norm == 0.0:
        raise ValueError("zero-norm vector in cosine similarity")
    return vector / norm, norm


def _unit_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1)
    if (norms == 0.0).any():
        raise ValueError("zero-norm vector in cosine similarity")
    return matrix / norms[:, None]


def _check_contrastive_inputs(anchors, positives, negatives):
    if len(anchors) != len(negatives):
        raise ValueError(
            f"{len(anchors)} anchors but {len(negatives)} negative sets"
        )
    for cls, vector in anchors:
        if cls not in positives:
            raise ValueError(f"anchor class {cls} has no positive center")
        if np.shape(vector) != np.shape(positives[cls]):
            raise ValueError("anchor and positive dimensions disagree")


def info_nce(
    anchors: Sequence[tuple[int, np.ndarray]],
    positives: Mapping[int, np.ndarray],
    negatives: Sequence[np.ndarray],
    temperature: float,
) -> LossOutput:
    """Temperature-scaled contrastive loss over cosine similarities.

    Each anchor is scored against its class positive and its own negative
    set; the per-anchor term is the negative log-probability of the positive
    under a softmax over [positive, negatives]. Terms are averaged over the
    anchors actually present, so absent classes shrink the denominator
    instead of contributing zeros.

    anchors: sequence of (class, vector); positives: class -> center vector;
    negatives: per-anchor [N_i, D] arrays aligned with `anchors`.
    Gradients flow to the anchors only, returned as grads["anchors"], one row
    per anchor.
    """
    if temperature <= 0.0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    _check_contrastive_inputs(anchors, positives, negatives)
    total = len(anchors)
    if total == 0:
        return LossOutput(0.0, {"anchors": np.zeros((0, 0))})

    value = 0.0
    grads = np.zeros((total, np.shape(anchors[0][1])[0]))
    for i, (cls, anchor) in enumerate(anchors):
        anchor = np.asarray(anchor, dtype=np.float64)
        a_hat, a_norm = _unit(anchor)
        p_hat, _ = _unit(np.asarray(positives[cls], dtype=np.float64))
        negs = np.asarray(negatives[i], dtype=np.float64)
        if negs.ndim != 2:
            raise ValueError(f"negatives for anchor {i} must be [N, D], got {negs.shape}")
        n_hat = _unit_rows(negs)

        sim_pos = float(a_hat @ p_hat)
        sim_neg = n_hat @ a_hat
        scores = np.concatenate(([sim_pos], sim_neg)) / temperature
        shift = scores.max()
        weights = np.exp(scores - shift)
        norm = weights.sum()
        value += -(scores[0] - shift - np.log(norm))

        probs = weights / norm
        # d sim / d anchor = (other_hat - sim * a_hat) / |anchor|
        combo = (probs[0] - 1.0) * p_hat + probs[1:] @ n_hat
        radial = (probs[0] - 1.0) * sim_pos + probs[1:] @ sim_neg
        grads[i] = (combo - radial * a_hat) / (temperature * a_norm)

    value /= total
    grads /= total
    return LossOutput(float(value), {"anchors": grads})


def contrastive_bce(
    anchors: Sequence[tuple[int, np.ndarray]],
    positives: Mapping[int, np.ndarray],
    negatives: Sequence[np.ndarray],
    temperature: float,
) -> LossOutput:
    """Binary variant: each (anchor, negative) pair scored independently.

    The pair term is -log sigmoid((sim_pos - sim_neg) / temperature) and the
    average runs over all pairs present. With one negative per anchor this
    coincides with info_nce. Same input and gradient conventions.
    """
    if temperature <= 0.0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    _check_contrastive_inputs(anchors, positives, negatives)
    total_pairs = int(sum(len(np.atleast_2d(n)) for n in negatives))
    if total_pairs == 0:
        return LossOutput(0.0, {"anchors": np.zeros((0, 0))})

    value = 0.0
    grads = np.zeros((len(anchors), np.shape(anchors[0][1])[0]))
    for i, (cls, anchor) in enumerate(anchors):
        anchor = np.asarray(anchor, dtype=np.float64)
        a_hat, a_norm = _unit(anchor)
        p_hat, _ = _unit(np.asarray(positives[cls], dtype=np.float64))
        negs = np.asarray(negatives[i], dtype=np.float64)
        if negs.ndim != 2:
            raise ValueError(f"negatives for anchor {i} must be [N, D], got {negs.shape}")
        n_hat = _unit_rows(negs)

        sim_pos = float(a_hat @ p_hat)
        sim_neg = n_hat @ a_hat
        margins = (sim_neg - sim_pos) / temperature
        value += np.logaddexp(0.0, margins).sum()

        # sigmoid(margins), stable on both tails
        sig = 0.5 * (1.0 + np.tanh(0.5 * margins))
        combo = -sig.sum() * p_hat + sig @ n_hat
        radial = -sig.sum() * sim_pos + sig @ sim_neg
        grads[i] = (combo - radial * a_hat) / (temperature * a_norm)

    value /= total_pairs
    grads /= total_pairs
    return LossOutput(float(value), {"anchors": grads})


def total_loss(
    supervised: float, unsupervised: float, contrastive: float, weights: LossWeights
) -> float:
    """Composite objective: L_sup + w_unsup * L_unsup + w_contra * L_contra."""
    return (
        supervised
        + weights.unsup_weight * unsupervised
        + weights.contrastive_weight * contrastive
    )
