"""Shared test oracles: finite differences, sort-based quantiles, simplexes."""

import numpy as np


def central_difference(fn, x, step=1e-6):
    """Numerical gradient of scalar fn at x via central differences.

    Mutates a copy of x one coordinate at a time; fn must read its argument
    fresh on every call.
    """
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        hi = fn(x)
        flat[i] = original - step
        lo = fn(x)
        flat[i] = original
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def relative_error(analytic, numeric, floor=1e-6):
    """Max elementwise |a - n| / max(|a|, |n|, floor)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    if analytic.size == 0:
        return 0.0
    return float((np.abs(analytic - numeric) / scale).max())


def sort_quantile(values, q):
    """Independent quantile: sort, then interpolate between order statistics."""
    xs = np.sort(np.asarray(values, dtype=np.float64).ravel())
    pos = (len(xs) - 1) * q
    lo = int(np.floor(pos))
    hi = int(np.ceil(pos))
    return float(xs[lo] + (pos - lo) * (xs[hi] - xs[lo]))


def random_simplex(rng, shape, num_classes):
    """Dirichlet(1) draws: uniform over the probability simplex."""
    raw = rng.gamma(1.0, 1.0, size=tuple(shape) + (num_classes,))
    return raw / raw.sum(axis=-1, keepdims=True)


def random_prob_batch(rng, batch=2, height=3, width=4, num_classes=5):
    from semipix.tensors import ProbBatch

    return ProbBatch(random_simplex(rng, (batch, height, width), num_classes))
