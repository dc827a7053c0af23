"""Anchor selection and rank-windowed negative mining for contrastive training.

Anchors for a class are pixels of that class whose predicted probability for
it clears a confidence floor. Negatives come from two pools: labeled pixels
where the class ranks inside the top window yet the ground truth disagrees,
and unlabeled pixels whose prediction is deemed unreliable while the class
sits in a mid-rank window (likely wrong, but not obviously so).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensors import LabelMap, ProbBatch, ReprBatch

# Positive centers shorter than this are treated as degenerate and skipped.
DEGENERATE_CENTER_NORM = 1e-8

NEGATIVE_SOURCES = ("unreliable", "reliable", "all")


@dataclass(frozen=True)
class SamplingConfig:
    """Knobs for anchor and negative selection."""

    anchor_conf_threshold: float = 0.3
    rank_low: int = 3
    rank_high: int = 20
    anchors_per_class: int = 50
    negatives_per_anchor: int = 256

    def __post_init__(self):
        if not 0.0 <= self.anchor_conf_threshold < 1.0:
            raise ValueError(
                f"anchor_conf_threshold must lie in [0, 1), got {self.anchor_conf_threshold}"
            )
        if self.rank_low < 0:
            raise ValueError(f"rank_low must be non-negative, got {self.rank_low}")
        if self.rank_high <= self.rank_low:
            raise ValueError(
                f"rank window is empty: rank_low={self.rank_low}, rank_high={self.rank_high}"
            )
        if self.anchors_per_class < 1 or self.negatives_per_anchor < 1:
            raise ValueError("anchors_per_class and negatives_per_anchor must be positive")

    def rank_bounds(self, num_classes: int) -> tuple[int, int]:
        """Effective (low, high) window with high clamped to the class count."""
        high = min(self.rank_high, num_classes)
        if self.rank_low >= high:
            raise ValueError(
                f"rank window empty after clamping to {num_classes} classes: "
                f"[{self.rank_low}, {high})"
            )
        return self.rank_low, high


def probability_ranks(batch: ProbBatch) -> np.ndarray:
    """Rank of each class in descending probability, shape [B, H, W, C], int32.

    Rank 0 is the argmax. Ties take ascending class index, so the ranking is
    always a permutation of 0..C-1 per pixel.
    """
    # stable argsort of the negated probabilities keeps tied classes in
    # ascending index order
    order = np.argsort(-batch.probs, axis=-1, kind="stable")
    ranks = np.empty(order.shape, dtype=np.int32)
    positions = np.arange(batch.num_classes, dtype=np.int32)
    positions = np.broadcast_to(positions, order.shape)
    np.put_along_axis(ranks, order, positions, axis=-1)
    return ranks


def anchor_mask(labels: LabelMap, probs: ProbBatch, cls: int, conf_threshold: float) -> np.ndarray:
    """Boolean [B, H, W] mask of anchor pixels for `cls`.

    A pixel qualifies when its (ground-truth or pseudo) label equals `cls`
    and the predicted probability for `cls` strictly exceeds the floor.
    IGNORE pixels never qualify.
    """
    return (labels.labels == cls) & (probs.probs[..., cls] > conf_threshold)


def labeled_anchors(
    reprs: ReprBatch, labels: LabelMap, probs: ProbBatch, cls: int, config: SamplingConfig
) -> np.ndarray:
    """Anchor vectors for `cls` drawn from ground-truth labels, shape [K, D]."""
    mask = anchor_mask(labels, probs, cls, config.anchor_conf_threshold)
    return reprs.reprs[mask]


def unlabeled_anchors(
    reprs: ReprBatch, pseudo: LabelMap, probs: ProbBatch, cls: int, config: SamplingConfig
) -> np.ndarray:
    """Anchor vectors for `cls` drawn from reliable pseudo-labels, shape [K, D]."""
    mask = anchor_mask(pseudo, probs, cls, config.anchor_conf_threshold)
    return reprs.reprs[mask]


def positive_center(anchors: np.ndarray) -> np.ndarray | None:
    """Arithmetic mean of the anchor vectors, or None when there are none."""
    anchors = np.asarray(anchors, dtype=np.float64)
    if anchors.size == 0:
        return None
    return anchors.mean(axis=0)


def center_is_degenerate(center: np.ndarray) -> bool:
    """Near-zero centers carry no direction and poison cosine similarities."""
    return float(np.linalg.norm(center)) < DEGENERATE_CENTER_NORM


def negative_mask_labeled(
    labels: LabelMap, ranks: np.ndarray, cls: int, config: SamplingConfig
) -> np.ndarray:
    """Labeled-pool negatives for `cls`: top-ranked but contradicted by truth.

    Boolean [B, H, W]: the ground truth differs from `cls` while the model
    ranks `cls` strictly inside the top rank_low positions.
    """
    low, _ = config.rank_bounds(labels.num_classes)
    return (labels.labels != cls) & (ranks[..., cls] < low)


def negative_mask_unlabeled(
    entropies: np.ndarray,
    threshold: float,
    ranks: np.ndarray,
    cls: int,
    config: SamplingConfig,
    source: str = "unreliable",
) -> np.ndarray:
    """Unlabeled-pool negatives for `cls` within the mid-rank window.

    `source` picks which pixels may contribute: "unreliable" keeps entropy
    strictly above the threshold, "reliable" inverts that test, and "all"
    drops it. The rank window [rank_low, rank_high) always applies.
    """
    if source not in NEGATIVE_SOURCES:
        raise ValueError(f"unknown negative source {source!r}")
    num_classes = ranks.shape[-1]
    low, high = config.rank_bounds(num_classes)
    in_window = (ranks[..., cls] >= low) & (ranks[..., cls] < high)
    if source == "unreliable":
        return (entropies > threshold) & in_window
    if source == "reliable":
        return (entropies <= threshold) & in_window
    return in_window


def collect_negatives(
    labeled_masks: dict[int, np.ndarray] | None,
    labeled_reprs: ReprBatch | None,
    unlabeled_masks: dict[int, np.ndarray] | None,
    unlabeled_reprs: ReprBatch | None,
) -> dict[int, np.ndarray]:
    """Gather negative vectors per class from the indicator masks.

    Either side may be None (e.g. fully supervised batches have no unlabeled
    half). Vectors appear in row-major pixel order, labeled pool first, so
    the result is reproducible.
    """
    classes: set[int] = set()
    if labeled_masks:
        classes.update(labeled_masks)
    if unlabeled_masks:
        classes.update(unlabeled_masks)
    out: dict[int, np.ndarray] = {}
    for cls in sorted(classes):
        parts = []
        if labeled_masks is not None and cls in labeled_masks:
            parts.append(labeled_reprs.reprs[labeled_masks[cls]])
        if unlabeled_masks is not None and cls in unlabeled_masks:
            parts.append(unlabeled_reprs.reprs[unlabeled_masks[cls]])
        if parts:
            out[cls] = np.concatenate(parts, axis=0)
    return out


def sample_rows(count: int, limit: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of at most `limit` rows out of `count`, uniform, no replacement.

    When everything fits, the identity order comes back and the generator is
    left untouched, which keeps downstream draws independent of pool size.
    """
    if count <= limit:
        return np.arange(count)
    return rng.choice(count, size=limit, replace=False)


def sample_anchors(anchors: np.ndarray, limit: int, rng: np.random.Generator) -> np.ndarray:
    """Uniformly subsample anchor vectors down to `limit` rows."""
    anchors = np.asarray(anchors)
    return anchors[sample_rows(len(anchors), limit, rng)]
