"""Training losses: label-smoothed classification and multi-target regression.

The classification loss is the per-class binary cross-entropy form against
smoothed targets (true class 1 - eps, others eps / (C - 1)). The regression
loss sums per-MoP mean squared errors over acceleration, speed, and spacing;
padded timesteps are excluded through a boolean mask and contribute exactly
zero.
"""

from __future__ import annotations

import numpy as np

from ..errors import DataError
from .tensor import Tensor

PROB_CLAMP = 1e-7


def smoothed_targets(labels, n_classes=6, epsilon=0.1):
    """(B, C) target matrix: 1 - eps on the true class, eps/(C-1) elsewhere."""
    labels = np.asarray(labels, dtype=int)
    q = np.full((len(labels), n_classes), epsilon / (n_classes - 1))
    q[np.arange(len(labels)), labels] = 1.0 - epsilon
    return q


def label_smoothed_ce(probs: Tensor, labels, epsilon=0.1) -> Tensor:
    """Mean per-class binary cross-entropy against smoothed targets.

    probs: (B, C) predicted distribution rows; exact 0/1 entries are clamped
    before the logarithms.
    """
    n_classes = probs.shape[-1]
    q = smoothed_targets(labels, n_classes, epsilon)
    p = probs.clip(PROB_CLAMP, 1.0 - PROB_CLAMP)
    per_sample = -(Tensor(q) * p.log() + Tensor(1.0 - q) * (1.0 - p).log()).sum(axis=-1)
    return per_sample.mean()


def smoothed_ce_floor(n_classes=6, epsilon=0.1) -> float:
    """Loss value at probs == targets, the minimum over the simplex."""
    q = np.full(n_classes, epsilon / (n_classes - 1))
    q[0] = 1.0 - epsilon
    return float(-(q * np.log(q) + (1.0 - q) * np.log(1.0 - q)).sum())


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=float))


def regression_loss(sim: dict, obs: dict, mask=None) -> Tensor:
    """Sum over MoPs {a, v, dx} of per-series mean squared error.

    Series are (T,) for one sample or (B, T) for a batch; with a batch, the
    per-pair means are averaged. mask, when given, marks valid steps; the
    per-pair normalizer is the valid-step count, so padded steps contribute
    exactly zero.
    """
    keys = ("a", "v", "dx")
    missing = [k for k in keys if k not in sim or k not in obs]
    if missing:
        raise DataError(f"regression loss needs series for {missing}")
    total = None
    for key in keys:
        s = _as_tensor(sim[key])
        o = _as_tensor(obs[key])
        if s.shape != o.shape:
            raise DataError(
                f"length mismatch for {key}: {s.shape} vs {o.shape}")
        err2 = (s - o) * (s - o)
        if mask is not None:
            m = np.asarray(mask, dtype=float)
            if m.shape != s.shape:
                raise DataError("mask shape must match the series")
            counts = np.maximum(m.sum(axis=-1, keepdims=True), 1.0)
            per_pair = (err2 * Tensor(m / counts)).sum(axis=-1)
        else:
            per_pair = err2.mean(axis=-1)
        term = per_pair.mean() if per_pair.shape else per_pair
        total = term if total is None else total + term
    return total


def single_step_mse(pred: Tensor, target) -> Tensor:
    """Mean squared error of one-step acceleration predictions."""
    target = _as_tensor(target)
    if pred.shape != target.shape:
        raise DataError("prediction/target shape mismatch")
    diff = pred - target
    return (diff * diff).mean()
