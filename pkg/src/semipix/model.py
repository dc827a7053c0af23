"""Tiny per-pixel model: shared affine+tanh encoder feeding two heads.

Every pixel is treated independently; there is no spatial mixing. The
segmentation head emits class logits and the representation head emits
vectors for contrastive training. Both heads read the same encoder output,
so gradients from either loss shape the shared features. Backpropagation is
closed-form, float64 throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np


@dataclass
class ModelParams:
    """Weights for encoder, segmentation head, and representation head."""

    enc_w: np.ndarray  # [D_in, D_hidden]
    enc_b: np.ndarray  # [D_hidden]
    seg_w: np.ndarray  # [D_hidden, C]
    seg_b: np.ndarray  # [C]
    rep_w: np.ndarray  # [D_hidden, D_repr]
    rep_b: np.ndarray  # [D_repr]

    def arrays(self):
        return [getattr(self, f.name) for f in fields(self)]

    def copy(self) -> "ModelParams":
        return ModelParams(*[a.copy() for a in self.arrays()])

    def zeros_like(self) -> "ModelParams":
        return ModelParams(*[np.zeros_like(a) for a in self.arrays()])

    def to_flat(self) -> np.ndarray:
        """Concatenate every array into one float64 vector (checkpoint form)."""
        return np.concatenate([a.ravel() for a in self.arrays()])

    @classmethod
    def from_flat(
        cls, flat: np.ndarray, feature_dim: int, hidden_dim: int, num_classes: int, repr_dim: int
    ) -> "ModelParams":
        shapes = [
            (feature_dim, hidden_dim),
            (hidden_dim,),
            (hidden_dim, num_classes),
            (num_classes,),
            (hidden_dim, repr_dim),
            (repr_dim,),
        ]
        expected = sum(int(np.prod(s)) for s in shapes)
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (expected,):
            raise ValueError(f"expected {expected} parameters, got {flat.shape}")
        arrays = []
        offset = 0
        for shape in shapes:
            size = int(np.prod(shape))
            arrays.append(flat[offset : offset + size].reshape(shape).copy())
            offset += size
        return cls(*arrays)


def init_params(
    feature_dim: int, hidden_dim: int, num_classes: int, repr_dim: int, rng: np.random.Generator
) -> ModelParams:
    """Gaussian weights scaled by 1/sqrt(fan_in), zero biases."""
    def layer(fan_in, fan_out):
        return rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)

    return ModelParams(
        enc_w=layer(feature_dim, hidden_dim),
        enc_b=np.zeros(hidden_dim),
        seg_w=layer(hidden_dim, num_classes),
        seg_b=np.zeros(num_classes),
        rep_w=layer(hidden_dim, repr_dim),
        rep_b=np.zeros(repr_dim),
    )


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


@dataclass
class ForwardCache:
    """Activations kept around for the backward pass."""

    features: np.ndarray  # [..., D_in]
    hidden: np.ndarray    # [..., D_hidden], post-tanh
    logits: np.ndarray    # [..., C]
    probs: np.ndarray     # [..., C]
    reprs: np.ndarray     # [..., D_repr], post-tanh


def forward(params: ModelParams, features: np.ndarray) -> ForwardCache:
    """Run the model on [..., D_in] features; leading axes pass through."""
    x = np.asarray(features, dtype=np.float64)
    hidden = np.tanh(x @ params.enc_w + params.enc_b)
    logits = hidden @ params.seg_w + params.seg_b
    reprs = np.tanh(hidden @ params.rep_w + params.rep_b)
    return ForwardCache(x, hidden, logits, softmax(logits), reprs)


def backward(
    params: ModelParams,
    cache: ForwardCache,
    d_logits: np.ndarray | None,
    d_reprs: np.ndarray | None,
) -> ModelParams:
    """Parameter gradients given upstream gradients on logits and reprs.

    Either upstream gradient may be None when that head got no loss. Returns
    a ModelParams holding the gradients.
    """
    hidden2 = cache.hidden.reshape(-1, cache.hidden.shape[-1])
    x2 = cache.features.reshape(-1, cache.features.shape[-1])
    d_hidden = np.zeros_like(hidden2)
    grads = params.zeros_like()

    if d_logits is not None:
        dl = d_logits.reshape(-1, d_logits.shape[-1])
        grads.seg_w = hidden2.T @ dl
        grads.seg_b = dl.sum(axis=0)
        d_hidden += dl @ params.seg_w.T
    if d_reprs is not None:
        dr = d_reprs.reshape(-1, d_reprs.shape[-1])
        reprs2 = cache.reprs.reshape(-1, cache.reprs.shape[-1])
        d_rep_pre = dr * (1.0 - reprs2 * reprs2)
        grads.rep_w = hidden2.T @ d_rep_pre
        grads.rep_b = d_rep_pre.sum(axis=0)
        d_hidden += d_rep_pre @ params.rep_w.T

    d_hidden_pre = d_hidden * (1.0 - hidden2 * hidden2)
    grads.enc_w = x2.T @ d_hidden_pre
    grads.enc_b = d_hidden_pre.sum(axis=0)
    return grads


def add_grads(a: ModelParams, b: ModelParams) -> ModelParams:
    return ModelParams(*[x + y for x, y in zip(a.arrays(), b.arrays())])


def sgd_step(
    params: ModelParams,
    grads: ModelParams,
    lr: float,
    momentum: float = 0.0,
    weight_decay: float = 0.0,
    velocity: ModelParams | None = None,
) -> ModelParams | None:
    """In-place SGD update; returns the updated velocity when momentum is on."""
    for i, (p, g) in enumerate(zip(params.arrays(), grads.arrays())):
        step = g + weight_decay * p if weight_decay else g
        if momentum:
            v = velocity.arrays()[i]
            v *= momentum
            v += step
            step = v
        p -= lr * step
    return velocity


def ema_update(teacher: ModelParams, student: ModelParams, momentum: float) -> ModelParams:
    """Exponential moving average: momentum * teacher + (1 - momentum) * student."""
    if not 0.0 <= momentum <= 1.0:
        raise ValueError(f"momentum must lie in [0, 1], got {momentum}")
    return ModelParams(
        *[momentum * t + (1.0 - momentum) * s for t, s in zip(teacher.arrays(), student.arrays())]
    )


def poly_lr(base: float, iteration: int, total_iterations: int, power: float = 0.9) -> float:
    """Polynomial decay from `base` at iteration 0 to 0 at `total_iterations`."""
    if base <= 0.0:
        raise ValueError(f"base learning rate must be positive, got {base}")
    if total_iterations < 1:
        raise ValueError(f"total_iterations must be at least 1, got {total_iterations}")
    if iteration < 0 or iteration > total_iterations:
        raise ValueError(f"iteration {iteration} outside [0, {total_iterations}]")
    return base * (1.0 - iteration / total_iterations) ** power
