"""Soft dice loss for voxelwise segmentation training."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, _make


@dataclass
class LossConfig:
    """Dice loss settings: number of label classes, per-class weights,
    and a smoothing epsilon that keeps the empty-target case finite."""

    label_count: int = 1
    class_weights: list = field(default=None)
    smooth_eps: float = 1e-6

    def __post_init__(self):
        if self.label_count < 1:
            raise ValueError("label_count must be >= 1")
        if self.class_weights is None:
            self.class_weights = [1.0] * self.label_count
        if len(self.class_weights) != self.label_count:
            raise ValueError("class_weights length must equal label_count")


def dice_loss(pred, target, cfg=None):
    """1 - soft dice overlap between predicted probabilities and binary labels.

    pred and target share a (B, L, ...) layout where axis 1 indexes the
    label classes. The value lies in [0, 1]: 0 for perfect overlap, 1 for
    none. Differentiable with respect to pred.
    """
    if cfg is None:
        cfg = LossConfig()
    if pred.shape != target.shape:
        raise ValueError(
            f"dice_loss shape mismatch: pred {pred.shape} vs target {target.shape}")
    if pred.data.ndim < 2 or pred.shape[1] != cfg.label_count:
        raise ValueError(
            f"pred axis 1 must have {cfg.label_count} label channels, "
            f"got shape {pred.shape}")

    w = np.asarray(cfg.class_weights, dtype=np.float64)
    eps = cfg.smooth_eps
    sum_axes = tuple(i for i in range(pred.data.ndim) if i != 1)

    p = pred.data.astype(np.float64, copy=False)
    t = target.data.astype(np.float64, copy=False)
    inter = (p * t).sum(axis=sum_axes)
    totals = (p + t).sum(axis=sum_axes)
    num = 2.0 * (w * inter).sum() + eps
    den = (w * totals).sum() + eps
    loss = 1.0 - num / den

    def backward_fn(g):
        g = float(g)
        wl = w.reshape([-1 if i == 1 else 1 for i in range(pred.data.ndim)])
        # d/dp of -(num/den) with num, den both linear in p
        gp = -g * (2.0 * wl * t * den - num * wl) / (den * den)
        pred._accumulate(gp.astype(pred.dtype, copy=False))

    return _make(np.array(loss, dtype=pred.dtype), (pred,), backward_fn)
