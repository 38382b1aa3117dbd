"""Training steps and epoch loops with early stopping."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from .losses import cross_entropy, giou_loss_batch, keypoint_mse_batch, val_loss_batch
from .optim import Adam, LrSchedule
from .rng import stream
from .system import StudentTeacher, augmented_views, plain_views
from .tensor import Tape, no_grad

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class Dataset:
    images: np.ndarray  # (N, H, W, C) float32 in [0, 1]
    labels: np.ndarray  # (N,) int
    regions: np.ndarray | None = None  # (N, 4) normalized keypoints

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "Dataset":
        regions = None if self.regions is None else self.regions[idx]
        return Dataset(self.images[idx], self.labels[idx], regions)


def batches(data: Dataset, batch_size: int, seed: int, epoch: int, shuffle: bool = True) -> Iterator[tuple[np.ndarray, Dataset]]:
    n = len(data)
    order = stream(seed, "shuffle", epoch).permutation(n) if shuffle else np.arange(n)
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        yield idx, data.subset(idx)


def _grads(tape: Tape, params) -> dict[str, np.ndarray]:
    return {name: tape.grad(p) for name, p in params.items()}


def hvat_train_step(system: StudentTeacher, optimizer: Adam, batch: Dataset, seed: int, step_key) -> dict[str, float]:
    """One gaze-supervised update of the teacher: CE + w1 GIoU + w2 keypoint MSE."""
    if batch.regions is None:
        raise TrainingError("gaze pre-training needs an attention region for every sample")
    w_giou, w_mse = system.cfg.hvat_weights
    views = augmented_views(batch.images, seed, "hvat", *step_key)
    with Tape() as tape:
        logits, region = system.teacher_forward(None, train=True, views=views)
        ce = cross_entropy(logits, batch.labels)
        g = giou_loss_batch(region, batch.regions.astype(region.dtype))
        m = keypoint_mse_batch(region, batch.regions.astype(region.dtype))
        total = ce + g * w_giou + m * w_mse
    tape.backward(total)
    optimizer.step(_grads(tape, optimizer.params))
    return {"ce": ce.item(), "giou": g.item(), "mse": m.item(), "total": total.item()}


def student_loss_terms(system: StudentTeacher, out, labels) -> tuple:
    ce = cross_entropy(out.logits, labels)
    total = ce
    val = None
    if system.cfg.uses_val:
        target = out.teacher_region.detach()
        val = val_loss_batch(out.region, target, *system.cfg.val_weights)
        total = total + val
    return ce, val, total


def student_train_step(system: StudentTeacher, optimizer: Adam, batch: Dataset, seed: int, step_key) -> dict[str, float]:
    """One student update: CE against labels + attention loss against the teacher's region."""
    cfg = system.cfg
    if cfg.teacher_frozen and any(name.startswith("teacher.") for name in optimizer.params):
        raise TrainingError("teacher is marked frozen but its parameters are in the optimizer")
    views = augmented_views(batch.images, seed, "student", *step_key)
    with Tape() as tape:
        out = system.forward(views, train=True)
        ce, val, total = student_loss_terms(system, out, batch.labels)
    tape.backward(total)
    optimizer.step(_grads(tape, optimizer.params))
    return {"ce": ce.item(), "val": 0.0 if val is None else val.item(), "total": total.item()}


def student_optimizer(system: StudentTeacher, schedule: LrSchedule) -> Adam:
    params = system.student_parameters()
    if system.cfg.use_teacher and not system.cfg.teacher_frozen:
        params.update(system.teacher_parameters())
    return Adam(params, schedule)


def teacher_optimizer(system: StudentTeacher, schedule: LrSchedule) -> Adam:
    return Adam(system.teacher_parameters(), schedule)


def eval_teacher_loss(system: StudentTeacher, data: Dataset, batch_size: int) -> float:
    w_giou, w_mse = system.cfg.hvat_weights
    total, count = 0.0, 0
    with no_grad():
        for _, b in batches(data, batch_size, 0, 0, shuffle=False):
            logits, region = system.teacher_forward(b.images)
            r = b.regions.astype(region.dtype)
            loss = cross_entropy(logits, b.labels) + giou_loss_batch(region, r) * w_giou
            loss = loss + keypoint_mse_batch(region, r) * w_mse
            total += loss.item() * len(b)
            count += len(b)
    return total / count


def eval_student_loss(system: StudentTeacher, data: Dataset, batch_size: int) -> float:
    total, count = 0.0, 0
    with no_grad():
        for _, b in batches(data, batch_size, 0, 0, shuffle=False):
            out = system.forward(plain_views(b.images), train=False)
            _, _, loss = student_loss_terms(system, out, b.labels)
            total += loss.item() * len(b)
            count += len(b)
    return total / count


def _snapshot(system: StudentTeacher):
    params = {k: p.data.copy() for k, p in system.named_parameters()}
    semas = {k: (None if s.smoothed is None else s.smoothed.copy(), s.initialized) for k, s in system.sema_states().items()}
    return params, semas


def _restore(system: StudentTeacher, snap) -> None:
    params, semas = snap
    for k, p in system.named_parameters():
        p.data[...] = params[k]
    for k, s in system.sema_states().items():
        s.smoothed, s.initialized = semas[k]


def fit(
    system: StudentTeacher,
    step: Callable,
    optimizer: Adam,
    train: Dataset,
    val: Dataset | None,
    val_loss: Callable,
    *,
    epochs: int,
    batch_size: int,
    patience: int,
    seed: int,
    phase: str,
    on_epoch: Callable[[dict], None] | None = None,
) -> list[dict]:
    """Run ``epochs`` epochs of ``step``; stop after ``patience`` epochs without a
    lower monitored loss and restore the best parameters.

    The monitored loss is the validation loss, or the mean training loss when
    no validation split is given.
    """
    history = []
    best, best_epoch, snap = np.inf, -1, None
    for epoch in range(epochs):
        terms: dict[str, list[float]] = {}
        for i, (_, b) in enumerate(batches(train, batch_size, seed, (phase, epoch))):
            for k, v in step(system, optimizer, b, seed, (epoch, i)).items():
                terms.setdefault(k, []).append(v * len(b))
        record = {"phase": phase, "epoch": epoch, "step": optimizer.state.step, "lr": optimizer.lr}
        record.update({f"train_{k}": float(np.sum(v) / len(train)) for k, v in terms.items()})
        monitored = record["train_total"]
        if val is not None and len(val):
            record["val_loss"] = monitored = val_loss(system, val, batch_size)
        history.append(record)
        if on_epoch:
            on_epoch(record)
        if monitored < best:
            best, best_epoch, snap = monitored, epoch, _snapshot(system)
        elif epoch - best_epoch >= patience:
            log.info("%s: early stop at epoch %d (best %d)", phase, epoch, best_epoch)
            break
    if snap is not None:
        _restore(system, snap)
    return history
