"""Quantile-based training objective over per-batch log-likelihoods.

The loss is the negated, linearly interpolated q-quantile of the batch's
log-likelihood scores. With B scores sorted ascending v_(0..B-1), the
quantile sits at position p = q*(B-1); writing k = floor(p) and w = p - k,
the value is (1-w)*v_(k) + w*v_(k+1). Only the one or two order statistics
that form the interpolation carry gradient; their weights sum to 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class QuantileSpec:
    """Quantile level with the pinned linear interpolation rule."""

    q: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.q < 1.0:
            raise ValueError(f"quantile must satisfy 0 <= q < 1, got {self.q}")


@dataclass(frozen=True)
class LossResult:
    value: float
    active_indices: tuple[int, ...]
    weights: tuple[float, ...]


def quantile(values, q: float) -> tuple[float, int, int, float]:
    """Interpolated q-quantile of a batch.

    Returns (value, lo_index, hi_index, w) where lo/hi are positions in the
    original batch of the two order statistics v_(k) and v_(k+1) and
    value = (1-w)*values[lo] + w*values[hi]. When the position is exact
    (w == 0, including q == 0 and singleton batches) lo == hi and w == 0.
    Ties are broken by original index via a stable sort.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-D batch of scalars, got shape {v.shape}")
    b = v.shape[0]
    if b == 0:
        raise ValueError("empty batch")
    if not 0.0 <= q < 1.0:
        raise ValueError(f"quantile must satisfy 0 <= q < 1, got {q}")
    if not np.isfinite(v).all():
        raise ValueError("batch contains non-finite values")
    order = np.argsort(v, kind="stable")
    p = q * (b - 1)
    k = int(math.floor(p))
    w = p - k
    lo = int(order[k])
    if w == 0.0:
        return float(v[lo]), lo, lo, 0.0
    hi = int(order[k + 1])
    return float((1.0 - w) * v[lo] + w * v[hi]), lo, hi, w


def qnll_loss(log_probs, spec: QuantileSpec) -> LossResult:
    """Negated interpolated q-quantile of the batch log-likelihoods."""
    value, lo, hi, w = quantile(log_probs, spec.q)
    if lo == hi:
        return LossResult(value=-value, active_indices=(lo,), weights=(1.0,))
    return LossResult(value=-value, active_indices=(lo, hi), weights=(1.0 - w, w))


def mean_nll_loss(log_probs) -> float:
    """Negated batch-average log-likelihood (the ablation baseline)."""
    v = np.asarray(log_probs, dtype=np.float64)
    if v.size == 0:
        raise ValueError("empty batch")
    return float(-v.mean())


def loss_gradient(loss: LossResult, batch_size: int) -> np.ndarray:
    """d(loss)/d(log_probs): -(weight) at each active index, 0 elsewhere."""
    grad = np.zeros(batch_size, dtype=np.float64)
    for idx, w in zip(loss.active_indices, loss.weights):
        grad[idx] -= w
    return grad
