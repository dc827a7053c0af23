"""Synthetic dense-labeling data: Voronoi class layouts, Gaussian features.

Each image's label map is a Voronoi partition of the pixel grid induced by
randomly placed sites, each carrying a class. Features are the class mean
plus isotropic Gaussian noise whose scale is the `overlap` parameter, so
overlap 0 gives exactly separable classes and larger values raise the Bayes
error. Class means are a randomly rotated orthogonal frame with a fixed
common scale, which keeps pairwise separations identical across seeds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Pairwise distance between class means is CLASS_SEPARATION * sqrt(2).
CLASS_SEPARATION = 1.0

# Sites per image beyond one-per-class would leave tiny fragments at toy
# grid sizes; a small surplus keeps layouts varied but coherent.
EXTRA_SITES = 2

# Class 0 takes this share of sites, the rest split the remainder evenly.
# Dense-labeling data is background-heavy; rare foreground classes are what
# make uncertain pixels informative as negatives.
BACKGROUND_SITE_SHARE = 0.5

MAX_SPLIT_RETRIES = 50


@dataclass(frozen=True)
class SyntheticDataset:
    """Images, dense labels, and the labeled/unlabeled index split."""

    features: np.ndarray          # [n, H, W, D_in] float64
    labels: np.ndarray            # [n, H, W] int32
    labeled_indices: np.ndarray   # [n_labeled] int64
    unlabeled_indices: np.ndarray  # [n - n_labeled] int64
    class_means: np.ndarray       # [C, D_in] float64

    @property
    def num_classes(self) -> int:
        return self.class_means.shape[0]


def _class_means(num_classes: int, feature_dim: int, rng: np.random.Generator) -> np.ndarray:
    """Rows of a random orthogonal frame, scaled to a fixed length."""
    if feature_dim < num_classes:
        raise ValueError(
            f"feature_dim {feature_dim} must be at least num_classes {num_classes}"
        )
    gaussian = rng.standard_normal((feature_dim, feature_dim))
    q, r = np.linalg.qr(gaussian)
    # fix signs so the frame is a deterministic function of `gaussian`
    q = q * np.sign(np.diag(r))
    return CLASS_SEPARATION * q[:, :num_classes].T


def _voronoi_labels(
    height: int, width: int, num_classes: int, rng: np.random.Generator
) -> np.ndarray:
    """One image's label map from nearest-site assignment."""
    num_sites = num_classes + EXTRA_SITES
    sites = rng.uniform(low=(0.0, 0.0), high=(height, width), size=(num_sites, 2))
    prior = np.full(num_classes, (1.0 - BACKGROUND_SITE_SHARE) / (num_classes - 1))
    prior[0] = BACKGROUND_SITE_SHARE
    site_classes = rng.choice(num_classes, size=num_sites, p=prior)
    rows, cols = np.mgrid[0:height, 0:width]
    d2 = (rows[..., None] - sites[:, 0]) ** 2 + (cols[..., None] - sites[:, 1]) ** 2
    return site_classes[d2.argmin(axis=-1)].astype(np.int32)


def generate_synthetic(
    images: int,
    height: int,
    width: int,
    num_classes: int,
    feature_dim: int,
    overlap: float,
    label_fraction: float,
    seed: int,
    class_means: np.ndarray | None = None,
) -> SyntheticDataset:
    """Build a seeded dataset; identical arguments give identical tensors.

    `label_fraction` in (0, 1] picks how many images keep their labels. The
    labeled split is re-drawn until every class appears in it, erroring out
    after a bounded number of retries. Pass `class_means` to sample fresh
    images from a previously generated distribution (e.g. a validation set
    matching its training set).
    """
    if images < 1:
        raise ValueError(f"need at least one image, got {images}")
    if num_classes < 2:
        raise ValueError(f"need at least two classes, got {num_classes}")
    if overlap < 0.0:
        raise ValueError(f"overlap must be non-negative, got {overlap}")
    if not 0.0 < label_fraction <= 1.0:
        raise ValueError(f"label_fraction must lie in (0, 1], got {label_fraction}")

    root = np.random.SeedSequence(seed)
    means_rng, layout_rng, noise_rng, split_rng = (
        np.random.default_rng(s) for s in root.spawn(4)
    )
    if class_means is None:
        class_means = _class_means(num_classes, feature_dim, means_rng)
    else:
        class_means = np.asarray(class_means, dtype=np.float64)
        if class_means.shape != (num_classes, feature_dim):
            raise ValueError(
                f"class_means shape {class_means.shape} does not match "
                f"({num_classes}, {feature_dim})"
            )

    labels = np.stack(
        [_voronoi_labels(height, width, num_classes, layout_rng) for _ in range(images)]
    )
    noise = noise_rng.standard_normal((images, height, width, feature_dim))
    features = class_means[labels] + overlap * noise

    n_labeled = max(1, int(round(images * label_fraction)))
    n_labeled = min(n_labeled, images)
    for _ in range(MAX_SPLIT_RETRIES):
        order = split_rng.permutation(images)
        labeled = np.sort(order[:n_labeled]).astype(np.int64)
        if len(np.unique(labels[labeled])) == num_classes:
            break
    else:
        raise ValueError(
            f"no labeled split of {n_labeled} images covered all {num_classes} classes "
            f"after {MAX_SPLIT_RETRIES} retries"
        )
    unlabeled = np.sort(order[n_labeled:]).astype(np.int64)
    return SyntheticDataset(features, labels, labeled, unlabeled, class_means)


def nearest_mean_predictions(dataset: SyntheticDataset) -> np.ndarray:
    """Labels from the closest class mean; ideal when overlap is 0."""
    flat = dataset.features.reshape(-1, dataset.features.shape[-1])
    d2 = ((flat[:, None, :] - dataset.class_means[None, :, :]) ** 2).sum(axis=-1)
    return d2.argmin(axis=1).astype(np.int32).reshape(dataset.labels.shape)
