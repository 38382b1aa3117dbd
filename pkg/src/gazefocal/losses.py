"""Box-regression and classification losses.

``giou_loss`` and ``keypoint_mse`` work on plain :class:`AttentionRegion`
values (float64). The ``*_batch`` variants take ``(n, 4)`` keypoint tensors
and are differentiable; they are what training uses.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .regions import AttentionRegion
from .tensor import ShapeError, Tensor


def _box_terms(a: AttentionRegion, b: AttentionRegion):
    ax0, ay0, ax1, ay1 = a.corners()
    bx0, by0, bx1, by1 = b.corners()
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    # areas from corners so identical boxes give inter == union == hull exactly
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    hull = (max(ax1, bx1) - min(ax0, bx0)) * (max(ay1, by1) - min(ay0, by0))
    return inter, union, hull


def giou(a: AttentionRegion, b: AttentionRegion) -> tuple[float, bool]:
    """Generalized IoU and a flag set when both boxes have zero area.

    Degenerate pairs get GIoU 0 (loss 1). The hull is built from corners, so
    a subnormal side can round it to zero while the union stays positive;
    that case is treated as degenerate too.
    """
    inter, union, hull = _box_terms(a, b)
    if union <= 0.0 or hull <= 0.0:
        return 0.0, True
    return inter / union - (hull - union) / hull, False


def giou_loss(pred: AttentionRegion, target: AttentionRegion, return_flag: bool = False):
    value, degenerate = giou(AttentionRegion(*pred), AttentionRegion(*target))
    loss = 1.0 - value
    return (loss, degenerate) if return_flag else loss


def keypoint_mse(pred, target) -> float:
    """Mean over the batch of squared L2 distances between keypoint 4-vectors."""
    p = np.asarray(pred, dtype=np.float64).reshape(-1, 4)
    t = np.asarray(target, dtype=np.float64).reshape(-1, 4)
    if p.shape != t.shape:
        raise ShapeError(f"keypoint_mse: batch shapes {p.shape} and {t.shape} differ")
    if len(p) == 0:
        raise ValueError("keypoint_mse: empty batch")
    return float(((p - t) ** 2).sum(axis=1).mean())


def val_loss(pred, target, lambda_giou: float = 1.0, lambda_mse: float = 1.0) -> float:
    """Visual attention loss on plain regions (batch mean of the GIoU term)."""
    if lambda_giou < 0 or lambda_mse < 0:
        raise ValueError("loss weights must be non-negative")
    p = np.asarray(pred, dtype=np.float64).reshape(-1, 4)
    t = np.asarray(target, dtype=np.float64).reshape(-1, 4)
    g = np.mean([giou_loss(AttentionRegion(*a), AttentionRegion(*b)) for a, b in zip(p, t)])
    return lambda_giou * float(g) + lambda_mse * keypoint_mse(p, t)


def _as_boxes(x) -> Tensor:
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    if x.ndim == 1:
        x = x.reshape(1, 4)
    if x.ndim != 2 or x.shape[1] != 4:
        raise ShapeError(f"expected (n, 4) keypoints, got {x.shape}")
    return x


def giou_loss_batch(pred, target) -> Tensor:
    """Batch-mean GIoU loss over ``(n, 4)`` (cx, cy, h, w) tensors.

    Pairs where both boxes are empty contribute loss 1 with zero gradient.
    """
    pred, target = _as_boxes(pred), _as_boxes(target)
    if pred.shape != target.shape:
        raise ShapeError(f"giou_loss_batch: shapes {pred.shape} and {target.shape} differ")

    def corners(b):
        cx, cy, h, w = b[:, 0], b[:, 1], b[:, 2], b[:, 3]
        x0, y0, x1, y1 = cx - w * 0.5, cy - h * 0.5, cx + w * 0.5, cy + h * 0.5
        return x0, y0, x1, y1, (x1 - x0) * (y1 - y0)

    ax0, ay0, ax1, ay1, area_a = corners(pred)
    bx0, by0, bx1, by1, area_b = corners(target)
    iw = T.maximum(T.minimum(ax1, bx1) - T.maximum(ax0, bx0), 0.0)
    ih = T.maximum(T.minimum(ay1, by1) - T.maximum(ay0, by0), 0.0)
    inter = iw * ih
    union = area_a + area_b - inter
    hull = (T.maximum(ax1, bx1) - T.minimum(ax0, bx0)) * (T.maximum(ay1, by1) - T.minimum(ay0, by0))
    ok = (union.data > 0) & (hull.data > 0)
    if ok.all():
        value = inter / union - (hull - union) / hull
    else:
        keep = Tensor(ok.astype(union.dtype))
        union = union + Tensor((~ok).astype(union.dtype))
        hull = hull + Tensor((hull.data <= 0).astype(union.dtype))
        value = (inter / union - (hull - union) / hull) * keep
    return (1.0 - value).mean()


def keypoint_mse_batch(pred, target) -> Tensor:
    pred, target = _as_boxes(pred), _as_boxes(target)
    if pred.shape != target.shape:
        raise ShapeError(f"keypoint_mse_batch: shapes {pred.shape} and {target.shape} differ")
    return T.square(pred - target).sum(axis=1).mean()


def val_loss_batch(pred, target, lambda_giou: float = 1.0, lambda_mse: float = 1.0) -> Tensor:
    if lambda_giou < 0 or lambda_mse < 0:
        raise ValueError("loss weights must be non-negative")
    total = giou_loss_batch(pred, target) * lambda_giou
    if lambda_mse:
        total = total + keypoint_mse_batch(pred, target) * lambda_mse
    return total


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean categorical cross-entropy of integer ``labels`` under ``logits``."""
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"cross_entropy: {labels.shape} labels for {n} logits rows")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise ValueError(f"cross_entropy: labels outside [0, {k})")
    onehot = np.zeros((n, k), dtype=logits.dtype)
    onehot[np.arange(n), labels] = 1
    return -(T.log_softmax(logits, axis=1) * Tensor(onehot)).sum() * (1.0 / n)
