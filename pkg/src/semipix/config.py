"""Run configuration: a flat key = value text format over one dataclass.

Unknown keys are rejected, every field is range-checked at load time, and a
single seed fans out into named substreams so that independent parts of the
pipeline (init, batch sampling, anchor sampling, bank sampling, data
generation) draw from independent generators.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import get_type_hints

import numpy as np

from .sampling import NEGATIVE_SOURCES, SamplingConfig


class ConfigError(ValueError):
    """A config file or value fails validation."""


# substream labels -> fixed offsets mixed into the seed sequence
RNG_STREAMS = {
    "init": 0,
    "labeled-batches": 1,
    "unlabeled-batches": 2,
    "anchors": 3,
    "bank": 4,
    "dataset": 5,
    "dataset-val": 6,
}


def stream_rng(seed: int, stream: str) -> np.random.Generator:
    """Independent generator for one named substream of `seed`."""
    return np.random.default_rng(np.random.SeedSequence((seed, RNG_STREAMS[stream])))


def stream_seed(seed: int, stream: str) -> np.random.SeedSequence:
    return np.random.SeedSequence((seed, RNG_STREAMS[stream]))


@dataclass
class RunConfig:
    """Everything a training run needs; defaults give a small CPU-scale run."""

    # bookkeeping
    seed: int = 0

    # optimization
    epochs: int = 40
    warm_start_epochs: int = 1
    steps_per_epoch: int = 8
    batch_labeled: int = 4
    batch_unlabeled: int = 4
    base_lr: float = 1.0
    sgd_momentum: float = 0.0
    weight_decay: float = 0.0
    ema_momentum: float = 0.99

    # reliability partition
    initial_unreliable_fraction: float = 0.2
    threshold_scope: str = "batch"  # "batch" | "epoch"

    # loss mixing
    unsup_base_weight: float = 1.0
    contrastive_weight: float = 0.1
    temperature: float = 0.5
    contrastive_loss: str = "infonce"  # "infonce" | "bce"

    # anchor / negative selection
    anchor_conf_threshold: float = 0.3
    rank_low: int = 3
    rank_high: int = 20
    anchors_per_class: int = 50
    negatives_per_anchor: int = 256
    negative_source: str = "unreliable"  # "unreliable" | "reliable" | "all"

    # memory bank
    bank_capacity_background: int = 5000
    bank_capacity_foreground: int = 3000
    background_class: int = 0

    # synthetic dataset
    images: int = 64
    val_images: int = 16
    height: int = 16
    width: int = 16
    num_classes: int = 6
    feature_dim: int = 8
    hidden_dim: int = 16
    repr_dim: int = 8
    overlap: float = 0.6
    label_fraction: float = 0.0625

    def validate(self) -> "RunConfig":
        def require(ok: bool, message: str):
            if not ok:
                raise ConfigError(message)

        require(self.seed >= 0, f"seed must be non-negative, got {self.seed}")
        require(self.epochs >= 1, f"epochs must be at least 1, got {self.epochs}")
        require(
            0 <= self.warm_start_epochs <= self.epochs,
            f"warm_start_epochs must lie in [0, epochs], got {self.warm_start_epochs}",
        )
        require(self.steps_per_epoch >= 1, "steps_per_epoch must be at least 1")
        require(self.batch_labeled >= 1, "batch_labeled must be at least 1")
        require(self.batch_unlabeled >= 1, "batch_unlabeled must be at least 1")
        require(self.base_lr > 0.0, f"base_lr must be positive, got {self.base_lr}")
        require(0.0 <= self.sgd_momentum < 1.0, "sgd_momentum must lie in [0, 1)")
        require(self.weight_decay >= 0.0, "weight_decay must be non-negative")
        require(0.0 <= self.ema_momentum <= 1.0, "ema_momentum must lie in [0, 1]")
        require(
            0.0 <= self.initial_unreliable_fraction <= 1.0,
            f"initial_unreliable_fraction must lie in [0, 1], "
            f"got {self.initial_unreliable_fraction}",
        )
        require(
            self.threshold_scope in ("batch", "epoch"),
            f"threshold_scope must be 'batch' or 'epoch', got {self.threshold_scope!r}",
        )
        require(self.unsup_base_weight >= 0.0, "unsup_base_weight must be non-negative")
        require(self.contrastive_weight >= 0.0, "contrastive_weight must be non-negative")
        require(self.temperature > 0.0, f"temperature must be positive, got {self.temperature}")
        require(
            self.contrastive_loss in ("infonce", "bce"),
            f"contrastive_loss must be 'infonce' or 'bce', got {self.contrastive_loss!r}",
        )
        require(
            self.negative_source in NEGATIVE_SOURCES,
            f"negative_source must be one of {NEGATIVE_SOURCES}, got {self.negative_source!r}",
        )
        require(self.num_classes >= 2, "num_classes must be at least 2")
        require(
            self.rank_low < min(self.rank_high, self.num_classes),
            f"rank window [{self.rank_low}, min({self.rank_high}, {self.num_classes})) is empty",
        )
        require(self.bank_capacity_background >= 1, "bank_capacity_background must be positive")
        require(self.bank_capacity_foreground >= 1, "bank_capacity_foreground must be positive")
        require(
            0 <= self.background_class < self.num_classes,
            f"background_class must lie in [0, num_classes), got {self.background_class}",
        )
        require(self.images >= 1, "images must be at least 1")
        require(self.val_images >= 1, "val_images must be at least 1")
        require(self.height >= 1 and self.width >= 1, "height and width must be at least 1")
        require(
            self.feature_dim >= self.num_classes,
            f"feature_dim must be at least num_classes, got {self.feature_dim}",
        )
        require(self.hidden_dim >= 2, "hidden_dim must be at least 2")
        require(self.repr_dim >= 2, "repr_dim must be at least 2")
        require(self.overlap >= 0.0, f"overlap must be non-negative, got {self.overlap}")
        require(
            0.0 < self.label_fraction <= 1.0,
            f"label_fraction must lie in (0, 1], got {self.label_fraction}",
        )
        # SamplingConfig re-checks its own slice of the fields
        self.sampling()
        return self

    def sampling(self) -> SamplingConfig:
        try:
            return SamplingConfig(
                anchor_conf_threshold=self.anchor_conf_threshold,
                rank_low=self.rank_low,
                rank_high=self.rank_high,
                anchors_per_class=self.anchors_per_class,
                negatives_per_anchor=self.negatives_per_anchor,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def to_text(self) -> str:
        lines = [f"{f.name} = {getattr(self, f.name)}" for f in fields(self)]
        return "\n".join(lines) + "\n"


def _parse_value(raw: str, target_type: type, key: str):
    raw = raw.strip()
    try:
        if target_type is bool:
            lowered = raw.lower()
            if lowered in ("true", "1", "yes"):
                return True
            if lowered in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {exc}") from exc


def parse_config(text: str) -> RunConfig:
    """Parse `key = value` lines; '#' starts a comment, blank lines ignored."""
    hints = get_type_hints(RunConfig)
    known = {f.name: hints[f.name] for f in fields(RunConfig)}
    overrides = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key = key.strip()
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in overrides:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        overrides[key] = _parse_value(value, known[key], key)
    return RunConfig(**overrides).validate()


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())
