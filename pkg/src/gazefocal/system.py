"""Student-teacher assembly of two global-focal networks.

The teacher sees hard-augmented views and is pre-trained against gaze
regions. The student sees soft-augmented views; its intermediate and final
features are fused with the teacher's (weighted sum + moving-average
smoothing) and both heads read the fused final feature.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .augment import PROFILES, augment
from .layers import Linear, Module
from .network import GlobalFocalConfig, GlobalFocalNet, SemaState, sema_apply, twl_combine
from .rng import stream
from .tensor import Tensor, no_grad


@dataclass(frozen=True)
class StudentTeacherConfig:
    student: GlobalFocalConfig = field(default_factory=GlobalFocalConfig)
    teacher: GlobalFocalConfig = field(default_factory=GlobalFocalConfig)
    # (student weight, teacher weight)
    inter_lambda_in: tuple[float, float] = (0.5, 0.5)
    inter_lambda_out: tuple[float, float] = (0.5, 0.5)
    # (GIoU weight, keypoint MSE weight) of the visual attention loss
    val_weights: tuple[float, float] = (1.0, 1.0)
    # the same pair for the teacher's detection loss during gaze pre-training
    hvat_weights: tuple[float, float] = (1.0, 1.0)
    teacher_frozen: bool = True
    use_teacher: bool = True
    n_classes: int = 2
    teacher_classes: int = 3
    patch: int = 8
    channels: int = 1

    def __post_init__(self):
        for lam in (*self.inter_lambda_in, *self.inter_lambda_out, *self.val_weights, *self.hvat_weights):
            if not np.isfinite(lam):
                raise ValueError(f"weights must be finite, got {lam}")
        if min(self.val_weights) < 0 or min(self.hvat_weights) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.student.dim != self.teacher.dim:
            raise ValueError("student and teacher must share the channel width to be fused")

    @property
    def uses_val(self) -> bool:
        return self.use_teacher and any(self.val_weights)


PRESETS = (
    "focal-only",
    "global-only",
    "focal-hvat",
    "global-hvat",
    "focal-hvat-val",
    "global-hvat-val",
    "full",
)


def apply_preset(cfg: StudentTeacherConfig, name: str) -> StudentTeacherConfig:
    """Ablation rows: pathway choice, with/without teacher, with/without the attention loss."""
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; expected one of {', '.join(PRESETS)}")
    if name == "full":
        return cfg
    pathway, *rest = name.split("-")
    narrow = GlobalFocalConfig.focal_only if pathway == "focal" else GlobalFocalConfig.global_only
    use_teacher = "hvat" in rest
    val = cfg.val_weights if "val" in rest else (0.0, 0.0)
    if "val" in rest and not any(val):
        val = (1.0, 1.0)
    return replace(
        cfg,
        student=narrow(cfg.student),
        teacher=narrow(cfg.teacher),
        use_teacher=use_teacher,
        val_weights=val,
    )


class Heads(Module):
    """Global-average-pool, then class logits and sigmoid (cx, cy, h, w)."""

    def __init__(self, rng, dim: int, n_classes: int):
        self.n_classes = n_classes
        self.classifier = Linear(rng, dim, n_classes)
        self.detector = Linear(rng, dim, 4)

    def __call__(self, z: Tensor) -> tuple[Tensor, Tensor]:
        pooled = z.mean(axis=(1, 2))
        return self.classifier(pooled), T.sigmoid(self.detector(pooled))


class Branch(Module):
    def __init__(self, cfg: GlobalFocalConfig, n_classes: int, seed: int, name: str, patch: int, channels: int):
        self.net = GlobalFocalNet(cfg, seed, name, patch, channels)
        self.heads = Heads(stream(seed, name, "heads"), cfg.dim, n_classes)

    def embed(self, x_global, x_focal):
        xg = self.net.embed(x_global)
        if x_focal is x_global:
            return xg, xg
        return xg, self.net.embed(x_focal) if self.net.cfg.uses_focal else None


class Views(NamedTuple):
    student_global: np.ndarray
    student_focal: np.ndarray
    teacher_global: np.ndarray
    teacher_focal: np.ndarray


def _batch(images) -> np.ndarray:
    x = np.asarray(images, dtype=np.float32)
    if x.ndim == 2:
        x = x[None, :, :, None]
    elif x.ndim == 3:
        x = x[..., None] if x.shape[-1] not in (1, 3) else x[None]
    return x


def plain_views(images) -> Views:
    x = _batch(images)
    return Views(x, x, x, x)


def augmented_views(images, seed: int, *path) -> Views:
    """Independent random draws per image and per pathway, from one source batch."""
    x = _batch(images)
    out = []
    for view in Views._fields:
        profile = PROFILES[view]
        out.append(np.stack([augment(img, profile, (seed, *path, view, i)) for i, img in enumerate(x)]))
    return Views(*out)


class Outputs(NamedTuple):
    logits: Tensor
    region: Tensor
    teacher_logits: Tensor | None
    teacher_region: Tensor | None


def inter_twl(
    z_s: Tensor, z_t: Tensor, lam_s: float, lam_t: float, sema: SemaState, train: bool, mode: str = "track"
) -> Tensor:
    """Student-teacher fusion; smoothed by ``sema`` in training mode."""
    return sema_apply(sema, twl_combine(z_s, z_t, lam_s, lam_t), train, mode)


class StudentTeacher(Module):
    def __init__(self, cfg: StudentTeacherConfig, seed: int = 0):
        self.cfg = cfg
        self.seed = seed
        self.teacher = Branch(cfg.teacher, cfg.teacher_classes, seed, "teacher", cfg.patch, cfg.channels)
        self.student = Branch(cfg.student, cfg.n_classes, seed, "student", cfg.patch, cfg.channels)
        self.sema_st_in = SemaState()
        self.sema_st_out = SemaState()

    def sema_states(self) -> dict[str, SemaState]:
        states = {f"teacher.{k}": v for k, v in self.teacher.net.sema_states().items()}
        states.update({f"student.{k}": v for k, v in self.student.net.sema_states().items()})
        states["sema_st_in"] = self.sema_st_in
        states["sema_st_out"] = self.sema_st_out
        return states

    def teacher_parameters(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.named_parameters() if k.startswith("teacher.")}

    def student_parameters(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.named_parameters() if k.startswith("student.")}

    def teacher_features(self, x_global, x_focal=None, train: bool = False):
        """``(z_in, z_out, logits, region)`` of the teacher alone."""
        x_focal = x_global if x_focal is None else x_focal
        xg, xf = self.teacher.embed(x_global, x_focal)
        net = self.teacher.net
        z_in = net.stage_in(xg, train, xf)
        z_out = net.stage_out(z_in, train)
        logits, region = self.teacher.heads(z_out)
        return z_in, z_out, logits, region

    def teacher_forward(self, images, train: bool = False, views: Views | None = None):
        views = views or plain_views(images)
        _, _, logits, region = self.teacher_features(views.teacher_global, views.teacher_focal, train)
        return logits, region

    def forward(self, views: Views, train: bool = False) -> Outputs:
        cfg = self.cfg
        zt_in = zt_out = t_logits = t_region = None
        if cfg.use_teacher:
            frozen = cfg.teacher_frozen
            guard = no_grad() if frozen else contextlib.nullcontext()
            with guard:
                zt_in, zt_out, t_logits, t_region = self.teacher_features(
                    views.teacher_global, views.teacher_focal, train and not frozen
                )
        xg, xf = self.student.embed(views.student_global, views.student_focal)
        net = self.student.net
        z = net.stage_in(xg, train, xf)
        if cfg.use_teacher:
            z = inter_twl(z, zt_in, *cfg.inter_lambda_in, self.sema_st_in, train, cfg.student.sema_mode)
        z = net.stage_out(z, train)
        if cfg.use_teacher:
            z = inter_twl(z, zt_out, *cfg.inter_lambda_out, self.sema_st_out, train, cfg.student.sema_mode)
        logits, region = self.student.heads(z)
        return Outputs(logits, region, t_logits, t_region)

    __call__ = forward

    def student_forward(self, images, train: bool = False, views: Views | None = None) -> Outputs:
        return self.forward(views or plain_views(images), train)


def predict(system: StudentTeacher, images) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode class probabilities ``(B, n)`` and regions ``(B, 4)``; no gaze input needed."""
    with no_grad():
        out = system.forward(plain_views(images), train=False)
        probs = T.softmax(out.logits.detach(), axis=1).data
    return probs.astype(np.float64), out.region.data.astype(np.float64)
