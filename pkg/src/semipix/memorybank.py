"""Per-class FIFO queues of negative vectors that persist across batches.

Each class owns a bounded queue: pushes append in order and evict the oldest
entries once the capacity is exceeded, so the queue always holds the most
recent vectors. Sampling is uniform, without replacement when the queue is
large enough and with replacement otherwise.
"""

from __future__ import annotations

import os

import numpy as np

from .tensors import tensor_read, tensor_write

MANIFEST_NAME = "bank_manifest.txt"


class MemoryBank:
    """Bounded per-class negative queues."""

    def __init__(self, num_classes: int, dim: int, capacities):
        if num_classes < 1:
            raise ValueError(f"num_classes must be positive, got {num_classes}")
        if dim < 1:
            raise ValueError(f"dim must be positive, got {dim}")
        capacities = [int(c) for c in capacities]
        if len(capacities) != num_classes:
            raise ValueError(f"expected {num_classes} capacities, got {len(capacities)}")
        if any(c < 1 for c in capacities):
            raise ValueError("every capacity must be positive")
        self.num_classes = num_classes
        self.dim = dim
        self.capacities = capacities
        self._queues: list[list[np.ndarray]] = [[] for _ in range(num_classes)]

    @classmethod
    def with_default_split(
        cls,
        num_classes: int,
        dim: int,
        background_capacity: int = 5000,
        foreground_capacity: int = 3000,
        background_class: int = 0,
    ) -> "MemoryBank":
        """Bank with a larger queue for the (typically dominant) background class."""
        caps = [foreground_capacity] * num_classes
        caps[background_class] = background_capacity
        return cls(num_classes, dim, caps)

    def _check_class(self, cls_index: int) -> None:
        if not 0 <= cls_index < self.num_classes:
            raise ValueError(f"class {cls_index} outside [0, {self.num_classes})")

    def size(self, cls_index: int) -> int:
        self._check_class(cls_index)
        return len(self._queues[cls_index])

    def contents(self, cls_index: int) -> np.ndarray:
        """Current queue for a class, oldest first, shape [K, D]."""
        self._check_class(cls_index)
        queue = self._queues[cls_index]
        if not queue:
            return np.empty((0, self.dim), dtype=np.float64)
        return np.stack(queue)

    def push(self, cls_index: int, vectors: np.ndarray) -> None:
        """Append `vectors` (shape [K, D]) and evict the oldest past capacity."""
        self._check_class(cls_index)
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.size == 0:
            return
        if vectors.ndim != 2 or vectors.shape[1] != self.dim:
            raise ValueError(
                f"expected vectors of shape [K, {self.dim}], got {vectors.shape}"
            )
        queue = self._queues[cls_index]
        queue.extend(vectors)
        excess = len(queue) - self.capacities[cls_index]
        if excess > 0:
            del queue[:excess]

    def sample_negatives(
        self, cls_index: int, count: int, rng: np.random.Generator
    ) -> np.ndarray | None:
        """Draw `count` vectors from a class queue, or None when it is empty.

        Queues holding at least `count` entries are sampled without
        replacement; smaller ones fall back to sampling with replacement.
        """
        self._check_class(cls_index)
        if count < 1:
            raise ValueError(f"count must be positive, got {count}")
        queue = self._queues[cls_index]
        if not queue:
            return None
        replace = len(queue) < count
        picks = rng.choice(len(queue), size=count, replace=replace)
        return np.stack([queue[i] for i in picks])

    def save(self, directory) -> None:
        """Snapshot every queue to one tensor file per class plus a manifest."""
        os.makedirs(directory, exist_ok=True)
        lines = [
            f"num_classes = {self.num_classes}",
            f"dim = {self.dim}",
            "capacities = " + ",".join(str(c) for c in self.capacities),
        ]
        for cls_index in range(self.num_classes):
            name = f"bank_class_{cls_index:03d}.u2tn"
            tensor_write(self.contents(cls_index), os.path.join(directory, name))
            lines.append(f"class_{cls_index} = {name}")
        with open(os.path.join(directory, MANIFEST_NAME), "w") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, directory) -> "MemoryBank":
        """Rebuild a bank from a snapshot directory. Inverse of save."""
        manifest = {}
        with open(os.path.join(directory, MANIFEST_NAME)) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                key, _, value = line.partition("=")
                manifest[key.strip()] = value.strip()
        num_classes = int(manifest["num_classes"])
        dim = int(manifest["dim"])
        capacities = [int(c) for c in manifest["capacities"].split(",")]
        bank = cls(num_classes, dim, capacities)
        for cls_index in range(num_classes):
            vectors = tensor_read(os.path.join(directory, manifest[f"class_{cls_index}"]))
            if len(vectors):
                bank.push(cls_index, vectors)
        return bank
