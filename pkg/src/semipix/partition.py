"""Entropy-based split of predictions into reliable and unreliable pixels.

Pixels whose predictive entropy falls strictly below a per-batch threshold
receive their argmax class as a pseudo-label; the rest are marked IGNORE.
The threshold is the (1 - fraction)-quantile of the batch's entropies, and
the fraction itself is annealed linearly over training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensors import IGNORE, LabelMap, ProbBatch


def prediction_entropy(batch: ProbBatch) -> np.ndarray:
    """Per-pixel entropy in nats, shape [B, H, W], float64.

    Zero probabilities contribute zero (the p*log p limit), so one-hot
    pixels map to 0 and uniform pixels to log C.
    """
    p = batch.probs.astype(np.float64, copy=False)
    terms = np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)
    return -terms.sum(axis=-1)


def entropy_threshold(entropies: np.ndarray, unreliable_fraction: float) -> float:
    """Entropy cutoff leaving roughly `unreliable_fraction` of pixels above it.

    Computed as the (1 - fraction)-quantile of the flattened entropies with
    linear interpolation between order statistics. A fraction of 0 returns
    +inf so that every pixel passes the strict comparison.
    """
    if not 0.0 <= unreliable_fraction <= 1.0:
        raise ValueError(f"unreliable_fraction must lie in [0, 1], got {unreliable_fraction}")
    values = np.asarray(entropies, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("cannot take a quantile of an empty entropy map")
    if unreliable_fraction == 0.0:
        return math.inf
    return float(np.quantile(values, 1.0 - unreliable_fraction))


def assign_pseudo_labels(
    batch: ProbBatch, threshold: float, entropies: np.ndarray | None = None
) -> LabelMap:
    """Argmax labels where entropy < threshold (strict), IGNORE elsewhere.

    Argmax ties resolve to the smallest class index. `entropies` may be
    passed to reuse a map already computed for this batch.
    """
    if entropies is None:
        entropies = prediction_entropy(batch)
    winners = batch.probs.argmax(axis=-1).astype(np.int32)
    labels = np.where(entropies < threshold, winners, np.int32(IGNORE))
    return LabelMap(labels.astype(np.int32), batch.num_classes)


def scheduled_unreliable_fraction(initial: float, epoch: int, total_epochs: int) -> float:
    """Linear anneal from `initial` at epoch 0 down to 0 at `total_epochs`."""
    if not 0.0 <= initial <= 1.0:
        raise ValueError(f"initial fraction must lie in [0, 1], got {initial}")
    if total_epochs < 1:
        raise ValueError(f"total_epochs must be at least 1, got {total_epochs}")
    if epoch < 0 or epoch > total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs}]")
    return initial * (1.0 - epoch / total_epochs)


def unsupervised_loss_weight(pseudo: LabelMap, base_weight: float) -> float:
    """Scale for the unsupervised loss: base * total pixels / labeled pixels.

    Counts pixels whose pseudo-label is not IGNORE; returns 0.0 when none
    survive so the loss term drops out instead of dividing by zero.
    """
    if base_weight < 0.0:
        raise ValueError(f"base_weight must be non-negative, got {base_weight}")
    kept = int((pseudo.labels != IGNORE).sum())
    if kept == 0:
        return 0.0
    return base_weight * pseudo.labels.size / kept


@dataclass
class PartitionSchedule:
    """Anneal state for the reliable/unreliable split across one run."""

    initial_fraction: float
    total_epochs: int
    threshold: float = math.inf

    def fraction_at(self, epoch: int) -> float:
        return scheduled_unreliable_fraction(self.initial_fraction, epoch, self.total_epochs)
