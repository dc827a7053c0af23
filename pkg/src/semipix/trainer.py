"""End-to-end teacher-student training on the synthetic task.

One step samples a labeled and an unlabeled image batch, pseudo-labels the
unlabeled half with the teacher (entropy partition), mines anchors and
negatives, and updates the student with supervised, unsupervised, and
contrastive losses. The teacher tracks the student by exponential moving
average. Warm-start epochs, epochs without unlabeled data, and runs whose
unsupervised and contrastive weights are both zero take a purely supervised
path that never touches the partition, sampling, or bank machinery.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, replace

import numpy as np

from .config import RunConfig, stream_rng, stream_seed
from .losses import LossOutput, LossWeights, contrastive_bce, cross_entropy, info_nce, total_loss
from .memorybank import MemoryBank
from .model import (
    ModelParams,
    add_grads,
    backward,
    ema_update,
    forward,
    init_params,
    poly_lr,
    sgd_step,
)
from .partition import (
    assign_pseudo_labels,
    entropy_threshold,
    prediction_entropy,
    scheduled_unreliable_fraction,
    unsupervised_loss_weight,
)
from .sampling import (
    anchor_mask,
    center_is_degenerate,
    collect_negatives,
    negative_mask_labeled,
    negative_mask_unlabeled,
    positive_center,
    probability_ranks,
    sample_rows,
)
from .synth import SyntheticDataset, generate_synthetic
from .tensors import LabelMap, ProbBatch, ReprBatch, tensor_read, tensor_write

METRICS_COLUMNS = (
    "epoch",
    "lr",
    "unreliable_fraction",
    "entropy_threshold",
    "unsup_weight",
    "loss_sup",
    "loss_unsup",
    "loss_contra",
    "miou_val",
)

CHECKPOINT_MANIFEST = "checkpoint_manifest.txt"


class NonFiniteLossError(RuntimeError):
    """Training produced a NaN or infinite loss."""


@dataclass
class TrainState:
    """Mutable state threaded through epochs."""

    config: RunConfig
    student: ModelParams
    teacher: ModelParams
    bank: MemoryBank
    rngs: dict[str, np.random.Generator]
    velocity: ModelParams | None = None
    epoch: int = 0
    global_step: int = 0

    @property
    def total_steps(self) -> int:
        return self.config.epochs * self.config.steps_per_epoch


@dataclass
class EpochStats:
    lr: float
    unreliable_fraction: float
    entropy_threshold: float
    unsup_weight: float
    loss_sup: float
    loss_unsup: float
    loss_contra: float
    miou_val: float = math.nan


def build_datasets(cfg: RunConfig) -> tuple[SyntheticDataset, SyntheticDataset]:
    """Training set plus a held-out validation set from the same distribution."""
    train_seed = int(stream_seed(cfg.seed, "dataset").generate_state(1)[0])
    val_seed = int(stream_seed(cfg.seed, "dataset-val").generate_state(1)[0])
    train = generate_synthetic(
        cfg.images,
        cfg.height,
        cfg.width,
        cfg.num_classes,
        cfg.feature_dim,
        cfg.overlap,
        cfg.label_fraction,
        train_seed,
    )
    val = generate_synthetic(
        cfg.val_images,
        cfg.height,
        cfg.width,
        cfg.num_classes,
        cfg.feature_dim,
        cfg.overlap,
        1.0,
        val_seed,
        class_means=train.class_means,
    )
    return train, val


def init_state(cfg: RunConfig) -> TrainState:
    student = init_params(
        cfg.feature_dim, cfg.hidden_dim, cfg.num_classes, cfg.repr_dim,
        stream_rng(cfg.seed, "init"),
    )
    teacher = student.copy()
    bank = MemoryBank.with_default_split(
        cfg.num_classes,
        cfg.repr_dim,
        background_capacity=cfg.bank_capacity_background,
        foreground_capacity=cfg.bank_capacity_foreground,
        background_class=cfg.background_class,
    )
    rngs = {
        name: stream_rng(cfg.seed, name)
        for name in ("labeled-batches", "unlabeled-batches", "anchors", "bank")
    }
    velocity = student.zeros_like() if cfg.sgd_momentum else None
    return TrainState(cfg, student, teacher, bank, rngs, velocity)


def _draw_batch(rng: np.random.Generator, indices: np.ndarray, count: int) -> np.ndarray:
    """Uniform image draw; falls back to replacement when the pool is small."""
    pool = np.asarray(indices)
    replace_draw = len(pool) < count
    picks = rng.choice(len(pool), size=count, replace=replace_draw)
    return pool[picks]


def _require_finite(value: float, state: TrainState, parts: dict) -> None:
    if math.isfinite(value):
        return
    detail = ", ".join(f"{k}={v!r}" for k, v in parts.items())
    raise NonFiniteLossError(
        f"non-finite loss {value!r} at epoch {state.epoch} step {state.global_step} ({detail})"
    )


def _supervised_step(state: TrainState, dataset: SyntheticDataset, lr: float) -> float:
    """Plain cross-entropy step on a labeled batch. Returns the loss value."""
    cfg = state.config
    idx = _draw_batch(state.rngs["labeled-batches"], dataset.labeled_indices, cfg.batch_labeled)
    features = dataset.features[idx]
    targets = dataset.labels[idx]
    cache = forward(state.student, features)
    sup = cross_entropy(
        cache.logits.reshape(-1, cfg.num_classes), targets.reshape(-1)
    )
    _require_finite(sup.value, state, {"loss_sup": sup.value})
    grads = backward(state.student, cache, sup.grads["logits"].reshape(cache.logits.shape), None)
    state.velocity = sgd_step(
        state.student, grads, lr, cfg.sgd_momentum, cfg.weight_decay, state.velocity
    )
    state.teacher = ema_update(state.teacher, state.student, cfg.ema_momentum)
    return sup.value


def _semi_step(
    state: TrainState,
    dataset: SyntheticDataset,
    lr: float,
    fraction: float,
    threshold_override: float | None,
    check_invariants: bool,
) -> tuple[float, float, float, float, float]:
    """One full step. Returns (loss_sup, loss_unsup, loss_contra, threshold, unsup_weight)."""
    cfg = state.config
    scfg = cfg.sampling()
    num_classes = cfg.num_classes

    lab_idx = _draw_batch(state.rngs["labeled-batches"], dataset.labeled_indices, cfg.batch_labeled)
    unl_idx = _draw_batch(
        state.rngs["unlabeled-batches"], dataset.unlabeled_indices, cfg.batch_unlabeled
    )
    labels = LabelMap(dataset.labels[lab_idx], num_classes)
    student_l = forward(state.student, dataset.features[lab_idx])
    student_u = forward(state.student, dataset.features[unl_idx])
    teacher_l = forward(state.teacher, dataset.features[lab_idx])
    teacher_u = forward(state.teacher, dataset.features[unl_idx])
    probs_l = ProbBatch(teacher_l.probs)
    probs_u = ProbBatch(teacher_u.probs)

    entropy_u = prediction_entropy(probs_u)
    if threshold_override is None:
        threshold = entropy_threshold(entropy_u, fraction)
    else:
        threshold = threshold_override
    pseudo = assign_pseudo_labels(probs_u, threshold, entropies=entropy_u)
    unsup_weight = unsupervised_loss_weight(pseudo, cfg.unsup_base_weight)

    sup = cross_entropy(student_l.logits.reshape(-1, num_classes), labels.labels.reshape(-1))
    unsup = cross_entropy(student_u.logits.reshape(-1, num_classes), pseudo.labels.reshape(-1))

    if check_invariants and threshold_override is None and math.isfinite(threshold):
        reliable = float((entropy_u < threshold).mean())
        floor = 1.0 - fraction - 1.0 / entropy_u.size
        assert reliable >= floor, f"reliable fraction {reliable} below {floor}"

    anchors: list[tuple[int, np.ndarray]] = []
    anchor_coords: list[tuple[int, int, int, int]] = []
    negatives: list[np.ndarray] = []
    positives: dict[int, np.ndarray] = {}
    contra = LossOutput(0.0, {})

    if cfg.contrastive_weight > 0.0:
        ranks_l = probability_ranks(probs_l)
        ranks_u = probability_ranks(probs_u)
        neg_masks_l = {
            cls: negative_mask_labeled(labels, ranks_l, cls, scfg) for cls in range(num_classes)
        }
        neg_masks_u = {
            cls: negative_mask_unlabeled(
                entropy_u, threshold, ranks_u, cls, scfg, source=cfg.negative_source
            )
            for cls in range(num_classes)
        }
        pools = collect_negatives(
            neg_masks_l, ReprBatch(teacher_l.reprs), neg_masks_u, ReprBatch(teacher_u.reprs)
        )
        if check_invariants:
            low, high = scfg.rank_bounds(num_classes)
            for cls in range(num_classes):
                assert not neg_masks_l[cls][labels.labels == cls].any()
                picked = ranks_u[..., cls][neg_masks_u[cls]]
                assert ((picked >= low) & (picked < high)).all()

        for cls in range(num_classes):
            mask_l = anchor_mask(labels, probs_l, cls, scfg.anchor_conf_threshold)
            mask_u = anchor_mask(pseudo, probs_u, cls, scfg.anchor_conf_threshold)

            pool = pools.get(cls)
            if pool is not None and len(pool):
                state.bank.push(cls, pool)

            count = int(mask_l.sum()) + int(mask_u.sum())
            if count == 0:
                continue
            student_vecs = np.concatenate(
                [student_l.reprs[mask_l], student_u.reprs[mask_u]], axis=0
            )
            teacher_vecs = np.concatenate(
                [teacher_l.reprs[mask_l], teacher_u.reprs[mask_u]], axis=0
            )
            center = positive_center(teacher_vecs)
            if center is None or center_is_degenerate(center):
                continue
            coords = np.concatenate(
                [
                    np.concatenate(
                        [np.zeros((int(mask_l.sum()), 1), dtype=np.int64), np.argwhere(mask_l)],
                        axis=1,
                    ),
                    np.concatenate(
                        [np.ones((int(mask_u.sum()), 1), dtype=np.int64), np.argwhere(mask_u)],
                        axis=1,
                    ),
                ],
                axis=0,
            )
            picks = sample_rows(count, scfg.anchors_per_class, state.rngs["anchors"])
            sampled_negatives = state.bank.sample_negatives(
                cls, scfg.negatives_per_anchor, state.rngs["bank"]
            )
            if sampled_negatives is None:
                continue
            positives[cls] = center
            for k in picks:
                anchors.append((cls, student_vecs[k]))
                anchor_coords.append(tuple(coords[k]))
                negatives.append(sampled_negatives)

        if check_invariants:
            for (cls, _), (side, b, i, j) in zip(anchors, anchor_coords):
                if side == 0:
                    assert labels.labels[b, i, j] == cls
                    assert probs_l.probs[b, i, j, cls] > scfg.anchor_conf_threshold
                else:
                    assert pseudo.labels[b, i, j] == cls
                    assert probs_u.probs[b, i, j, cls] > scfg.anchor_conf_threshold

        if anchors:
            loss_fn = info_nce if cfg.contrastive_loss == "infonce" else contrastive_bce
            contra = loss_fn(anchors, positives, negatives, cfg.temperature)

    weights = LossWeights(unsup_weight, cfg.contrastive_weight, cfg.temperature)
    combined = total_loss(sup.value, unsup.value, contra.value, weights)
    _require_finite(
        combined,
        state,
        {"loss_sup": sup.value, "loss_unsup": unsup.value, "loss_contra": contra.value},
    )

    d_logits_l = sup.grads["logits"].reshape(student_l.logits.shape)
    d_logits_u = None
    if unsup_weight > 0.0:
        d_logits_u = unsup_weight * unsup.grads["logits"].reshape(student_u.logits.shape)
    d_reprs_l = None
    d_reprs_u = None
    if anchors and cfg.contrastive_weight > 0.0:
        d_reprs_l = np.zeros_like(student_l.reprs)
        d_reprs_u = np.zeros_like(student_u.reprs)
        for row, (side, b, i, j) in zip(contra.grads["anchors"], anchor_coords):
            target = d_reprs_l if side == 0 else d_reprs_u
            target[b, i, j] += cfg.contrastive_weight * row

    grads = backward(state.student, student_l, d_logits_l, d_reprs_l)
    if d_logits_u is not None or d_reprs_u is not None:
        grads = add_grads(grads, backward(state.student, student_u, d_logits_u, d_reprs_u))
    state.velocity = sgd_step(
        state.student, grads, lr, cfg.sgd_momentum, cfg.weight_decay, state.velocity
    )
    state.teacher = ema_update(state.teacher, state.student, cfg.ema_momentum)
    return sup.value, unsup.value, contra.value, threshold, unsup_weight


def _epoch_is_supervised(cfg: RunConfig, epoch: int, dataset: SyntheticDataset) -> bool:
    if epoch < cfg.warm_start_epochs:
        return True
    if len(dataset.unlabeled_indices) == 0:
        return True
    return cfg.unsup_base_weight == 0.0 and cfg.contrastive_weight == 0.0


def train_epoch(
    state: TrainState, dataset: SyntheticDataset, check_invariants: bool = False
) -> EpochStats:
    """Run one epoch of steps and return per-epoch means of the step stats."""
    cfg = state.config
    fraction = scheduled_unreliable_fraction(
        cfg.initial_unreliable_fraction, state.epoch, cfg.epochs
    )
    supervised_only = _epoch_is_supervised(cfg, state.epoch, dataset)

    threshold_override = None
    if not supervised_only and cfg.threshold_scope == "epoch":
        # one threshold for the whole epoch, from the teacher's view of the
        # entire unlabeled split
        probs = ProbBatch(forward(state.teacher, dataset.features[dataset.unlabeled_indices]).probs)
        threshold_override = entropy_threshold(prediction_entropy(probs), fraction)

    lr_sum = 0.0
    sup_sum = 0.0
    unsup_sum = 0.0
    contra_sum = 0.0
    threshold_sum = 0.0
    weight_sum = 0.0
    for _ in range(cfg.steps_per_epoch):
        lr = poly_lr(cfg.base_lr, state.global_step, state.total_steps)
        if supervised_only:
            sup_sum += _supervised_step(state, dataset, lr)
        else:
            sup, unsup, contra, threshold, unsup_weight = _semi_step(
                state, dataset, lr, fraction, threshold_override, check_invariants
            )
            sup_sum += sup
            unsup_sum += unsup
            contra_sum += contra
            threshold_sum += threshold
            weight_sum += unsup_weight
        lr_sum += lr
        state.global_step += 1

    steps = cfg.steps_per_epoch
    return EpochStats(
        lr=lr_sum / steps,
        unreliable_fraction=fraction,
        entropy_threshold=math.nan if supervised_only else threshold_sum / steps,
        unsup_weight=0.0 if supervised_only else weight_sum / steps,
        loss_sup=sup_sum / steps,
        loss_unsup=0.0 if supervised_only else unsup_sum / steps,
        loss_contra=0.0 if supervised_only else contra_sum / steps,
    )


def miou_from_predictions(
    preds: np.ndarray, labels: np.ndarray, num_classes: int
) -> tuple[np.ndarray, float]:
    """Per-class IoU (nan where a class is absent from both) and their mean.

    IoU is intersection over union of the predicted and true pixel sets; a
    class missing from both prediction and ground truth is excluded rather
    than counted as a free hit.
    """
    if labels.size == 0:
        raise ValueError("cannot evaluate on an empty split")
    ious = np.full(num_classes, np.nan)
    for cls in range(num_classes):
        predicted = preds == cls
        actual = labels == cls
        union = int(predicted.sum() + actual.sum() - (predicted & actual).sum())
        if union > 0:
            ious[cls] = (predicted & actual).sum() / union
    return ious, float(np.nanmean(ious))


def evaluate_miou(
    params: ModelParams, features: np.ndarray, labels: np.ndarray, num_classes: int
) -> tuple[np.ndarray, float]:
    """Mean IoU of the model's argmax predictions on one split."""
    preds = forward(params, features).logits.argmax(axis=-1)
    return miou_from_predictions(preds, labels, num_classes)


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def metrics_to_csv(rows: list[dict], path) -> None:
    lines = [",".join(METRICS_COLUMNS)]
    for row in rows:
        lines.append(",".join(_fmt(row[col]) for col in METRICS_COLUMNS))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


@dataclass
class RunResult:
    config: RunConfig
    rows: list[dict]
    state: TrainState
    train_data: SyntheticDataset
    val_data: SyntheticDataset

    @property
    def final_miou(self) -> float:
        return self.rows[-1]["miou_val"]


def run_training(
    cfg: RunConfig, out_dir=None, check_invariants: bool = False
) -> RunResult:
    """Train for cfg.epochs and optionally write metrics plus a checkpoint."""
    cfg.validate()
    train_data, val_data = build_datasets(cfg)
    state = init_state(cfg)
    rows = []
    for epoch in range(cfg.epochs):
        state.epoch = epoch
        stats = train_epoch(state, train_data, check_invariants)
        _, miou = evaluate_miou(
            state.teacher, val_data.features, val_data.labels, cfg.num_classes
        )
        stats.miou_val = miou
        row = {"epoch": epoch}
        row.update(
            (col, getattr(stats, col)) for col in METRICS_COLUMNS if col != "epoch"
        )
        rows.append(row)
    result = RunResult(cfg, rows, state, train_data, val_data)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        metrics_to_csv(rows, os.path.join(out_dir, "metrics.csv"))
        save_checkpoint(state, out_dir)
        with open(os.path.join(out_dir, "config_resolved.txt"), "w") as fh:
            fh.write(cfg.to_text())
    return result


def run_supervised_baseline(cfg: RunConfig, out_dir=None) -> RunResult:
    """Standalone supervised loop: labeled cross-entropy, SGD, teacher EMA.

    Written as its own loop on purpose; it shares only the model primitives
    and the metrics format with the full trainer, so degenerate full runs can
    be checked against it.
    """
    cfg.validate()
    train_data, val_data = build_datasets(cfg)
    student = init_params(
        cfg.feature_dim, cfg.hidden_dim, cfg.num_classes, cfg.repr_dim,
        stream_rng(cfg.seed, "init"),
    )
    teacher = student.copy()
    velocity = student.zeros_like() if cfg.sgd_momentum else None
    batch_rng = stream_rng(cfg.seed, "labeled-batches")
    total_steps = cfg.epochs * cfg.steps_per_epoch

    rows = []
    step = 0
    for epoch in range(cfg.epochs):
        lr_sum = 0.0
        sup_sum = 0.0
        for _ in range(cfg.steps_per_epoch):
            lr = poly_lr(cfg.base_lr, step, total_steps)
            idx = _draw_batch(batch_rng, train_data.labeled_indices, cfg.batch_labeled)
            cache = forward(student, train_data.features[idx])
            sup = cross_entropy(
                cache.logits.reshape(-1, cfg.num_classes),
                train_data.labels[idx].reshape(-1),
            )
            if not math.isfinite(sup.value):
                raise NonFiniteLossError(f"non-finite supervised loss at step {step}")
            grads = backward(
                student, cache, sup.grads["logits"].reshape(cache.logits.shape), None
            )
            velocity = sgd_step(student, grads, lr, cfg.sgd_momentum, cfg.weight_decay, velocity)
            teacher = ema_update(teacher, student, cfg.ema_momentum)
            lr_sum += lr
            sup_sum += sup.value
            step += 1
        _, miou = evaluate_miou(teacher, val_data.features, val_data.labels, cfg.num_classes)
        rows.append(
            {
                "epoch": epoch,
                "lr": lr_sum / cfg.steps_per_epoch,
                "unreliable_fraction": scheduled_unreliable_fraction(
                    cfg.initial_unreliable_fraction, epoch, cfg.epochs
                ),
                "entropy_threshold": math.nan,
                "unsup_weight": 0.0,
                "loss_sup": sup_sum / cfg.steps_per_epoch,
                "loss_unsup": 0.0,
                "loss_contra": 0.0,
                "miou_val": miou,
            }
        )
    bank = MemoryBank.with_default_split(
        cfg.num_classes,
        cfg.repr_dim,
        background_capacity=cfg.bank_capacity_background,
        foreground_capacity=cfg.bank_capacity_foreground,
        background_class=cfg.background_class,
    )
    state = TrainState(cfg, student, teacher, bank, {}, velocity, cfg.epochs - 1, step)
    result = RunResult(cfg, rows, state, train_data, val_data)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        metrics_to_csv(rows, os.path.join(out_dir, "metrics.csv"))
    return result


def reliability_ablation(
    cfg: RunConfig, modes: list[str], seeds: list[int]
) -> tuple[list[dict], list[dict]]:
    """Train per (mode, seed); return per-run rows and per-mode summaries.

    Runs differ only in the negative source and the seed, so comparisons
    isolate how the unlabeled negative pool is chosen. Summary std is the
    sample standard deviation over seeds (0 for a single seed).
    """
    runs = []
    for mode in modes:
        for seed in seeds:
            run_cfg = replace(cfg, negative_source=mode, seed=seed)
            result = run_training(run_cfg)
            runs.append({"mode": mode, "seed": seed, "miou": result.final_miou})
    summaries = []
    for mode in modes:
        scores = np.array([r["miou"] for r in runs if r["mode"] == mode])
        std = float(scores.std(ddof=1)) if len(scores) > 1 else 0.0
        summaries.append({"mode": mode, "mean": float(scores.mean()), "std": std})
    return runs, summaries


def ablation_to_csv(runs: list[dict], summaries: list[dict], path) -> None:
    lines = ["mode,seed,miou,mean,std"]
    for r in runs:
        lines.append(f"{r['mode']},{r['seed']},{_fmt(r['miou'])},,")
    for s in summaries:
        lines.append(f"{s['mode']},summary,,{_fmt(s['mean'])},{_fmt(s['std'])}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def save_checkpoint(state: TrainState, out_dir) -> None:
    """Model weights, bank snapshot, and a manifest tying them together."""
    os.makedirs(out_dir, exist_ok=True)
    cfg = state.config
    tensor_write(state.student.to_flat(), os.path.join(out_dir, "student.u2tn"))
    tensor_write(state.teacher.to_flat(), os.path.join(out_dir, "teacher.u2tn"))
    bank_dir = os.path.join(out_dir, "bank")
    state.bank.save(bank_dir)
    lines = [
        "format = semipix-checkpoint-v1",
        f"epoch = {state.epoch}",
        f"global_step = {state.global_step}",
        f"feature_dim = {cfg.feature_dim}",
        f"hidden_dim = {cfg.hidden_dim}",
        f"num_classes = {cfg.num_classes}",
        f"repr_dim = {cfg.repr_dim}",
        "student = student.u2tn",
        "teacher = teacher.u2tn",
        "bank_dir = bank",
    ]
    with open(os.path.join(out_dir, CHECKPOINT_MANIFEST), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(manifest_path) -> dict:
    """Read a checkpoint manifest back into params, bank, and counters."""
    base = os.path.dirname(os.path.abspath(manifest_path))
    entries = {}
    with open(manifest_path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            entries[key.strip()] = value.strip()
    if entries.get("format") != "semipix-checkpoint-v1":
        raise ValueError(f"not a checkpoint manifest: {manifest_path}")
    dims = {
        key: int(entries[key])
        for key in ("feature_dim", "hidden_dim", "num_classes", "repr_dim")
    }
    student = ModelParams.from_flat(
        tensor_read(os.path.join(base, entries["student"])), **dims
    )
    teacher = ModelParams.from_flat(
        tensor_read(os.path.join(base, entries["teacher"])), **dims
    )
    bank = MemoryBank.load(os.path.join(base, entries["bank_dir"]))
    return {
        "student": student,
        "teacher": teacher,
        "bank": bank,
        "epoch": int(entries["epoch"]),
        "global_step": int(entries["global_step"]),
        "dims": dims,
    }
