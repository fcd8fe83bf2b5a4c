"""Pixel-wise supervision: depth MSE, contrastive depth loss, DeepPixel BCE, cross-entropy."""

from __future__ import annotations

import numpy as np

from . import functional as F
from .tensor import ShapeError, Tensor

__all__ = [
    "BCE_EPS",
    "contrast_kernels",
    "mse_loss",
    "contrastive_depth_loss",
    "overall_depth_loss",
    "deeppixel_loss",
    "cross_entropy",
    "score_from_map",
    "binary_target",
]

BCE_EPS = 1e-7

_NEIGHBORS = [(0, 0), (0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1), (2, 2)]


def contrast_kernels(dtype=np.float32) -> np.ndarray:
    """Eight 3x3 zero-sum kernels: -1 at the center, +1 at one neighbor. Shape (8, 1, 3, 3)."""
    ker = np.zeros((8, 1, 3, 3), dtype=dtype)
    for i, (r, c) in enumerate(_NEIGHBORS):
        ker[i, 0, 1, 1] = -1.0
        ker[i, 0, r, c] = 1.0
    return ker


def _check_same(pred: Tensor, target) -> Tensor:
    target = target if isinstance(target, Tensor) else Tensor(np.asarray(target, dtype=pred.dtype))
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ")
    return target


def mse_loss(pred: Tensor, target) -> Tensor:
    target = _check_same(pred, target)
    diff = pred - target
    return (diff * diff).mean()


def _as_maps(t: Tensor) -> Tensor:
    """View (H, W), (N, H, W) or (N, 1, H, W) as N x 1 x H x W."""
    if t.ndim == 2:
        return t.reshape(1, 1, *t.shape)
    if t.ndim == 3:
        return t.reshape(t.shape[0], 1, *t.shape[1:])
    if t.ndim == 4 and t.shape[1] == 1:
        return t
    raise ShapeError(f"expected depth maps shaped (H,W), (N,H,W) or (N,1,H,W), got {t.shape}")


def _edge_pad(t: Tensor) -> Tensor:
    """Replicate the border by one pixel, so a constant offset stays constant."""
    h, w = t.shape[-2:]
    rows = np.r_[0, np.arange(h), h - 1]
    cols = np.r_[0, np.arange(w), w - 1]
    return t[:, :, rows, :][:, :, :, cols]


def contrastive_depth_loss(pred: Tensor, target) -> Tensor:
    """Sum over the eight directional contrasts of the MSE between contrast maps.

    Borders are replicate-padded: with zero padding a global offset would leak in at the edges.
    """
    target = _check_same(pred, target)
    ker = Tensor(contrast_kernels(pred.dtype))
    cp = F.conv2d(_edge_pad(_as_maps(pred)), ker)
    ct = F.conv2d(_edge_pad(_as_maps(target)), ker)
    diff = cp - ct
    # mean over the 8 contrast channels times 8 == sum of per-kernel MSEs
    return (diff * diff).mean() * 8.0


def overall_depth_loss(pred: Tensor, target) -> Tensor:
    return mse_loss(pred, target) + contrastive_depth_loss(pred, target)


def deeppixel_loss(logits: Tensor, target) -> Tensor:
    """Mean binary cross-entropy over map cells; logits go through a sigmoid, then a clamp."""
    target = _check_same(logits, target)
    p = logits.sigmoid().clip(BCE_EPS, 1.0 - BCE_EPS)
    t = target.data
    ll = p.log() * Tensor(t) + (1.0 - p).log() * Tensor(1.0 - t)
    return -ll.mean()


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Two-class (or K-class) cross-entropy on N x K logits."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise ShapeError(f"logits {logits.shape} do not match {labels.shape[0]} labels")
    logp = F.log_softmax(logits, axis=1)
    onehot = np.zeros(logits.shape, dtype=logits.dtype)
    onehot[np.arange(labels.shape[0]), labels] = 1.0
    return -(logp * Tensor(onehot)).sum() * (1.0 / labels.shape[0])


def score_from_map(pred_map) -> float | np.ndarray:
    """Mean of the predicted map; one score per sample for batched input."""
    arr = pred_map.data if isinstance(pred_map, Tensor) else np.asarray(pred_map)
    if arr.ndim <= 2:
        return float(arr.mean())
    return arr.reshape(arr.shape[0], -1).mean(axis=1)


def binary_target(label: int, size: int) -> np.ndarray:
    return np.full((size, size), float(label), dtype=np.float32)
