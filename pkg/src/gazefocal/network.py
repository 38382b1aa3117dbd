"""Global-focal network: a 4-block focal pathway and a 2-block global pathway
fused by weighted lateral additions with moving-average smoothing.

The intermediate fusion combines ``g0(x)`` with ``f1(f0(x))``; its smoothed
output feeds both ``g1`` and ``f2``. The final fusion combines ``g1(z_in)``
with ``f3(f2(z_in))``.

Smoothing modes (training only; evaluation always uses the raw fusion):

* ``"track"`` (default): the running smoothed batch mean is updated, the
  fused features pass through unchanged.
* ``"replace"``: the batch mean of the fused features is swapped for the
  smoothed one, ``z - mean(z) + s``. With Adam the loss barely constrains
  the batch mean under this mode, so it drifts away from ``s`` and
  evaluation-mode outputs stop matching training; kept for experiments.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .attention import BlockConfig, PatchEmbed, SwinBlock
from .layers import Module
from .rng import stream
from .tensor import ShapeError, Tensor


SEMA_MODES = ("track", "replace")


@dataclass(frozen=True)
class GlobalFocalConfig:
    dim: int = 64
    window: int = 4
    focal_shifts: tuple[int, ...] = (0, 1, 2, 3)
    focal_heads: tuple[int, ...] = (2, 4, 4, 8)
    focal_mlp: tuple[int, ...] = (64, 128, 128, 256)
    global_shifts: tuple[int, ...] = (0, 1)
    global_heads: tuple[int, ...] = (4, 8)
    global_mlp: tuple[int, ...] = (128, 256)
    # (global weight, focal weight) for the intermediate and final fusions
    lambda_in: tuple[float, float] = (0.5, 0.5)
    lambda_out: tuple[float, float] = (0.5, 0.5)
    sema_mode: str = "track"

    def __post_init__(self):
        if self.sema_mode not in SEMA_MODES:
            raise ValueError(f"sema_mode must be one of {SEMA_MODES}, got {self.sema_mode!r}")
        if not (len(self.focal_shifts) == len(self.focal_heads) == len(self.focal_mlp) == 4):
            raise ValueError("focal pathway needs exactly 4 blocks")
        if not (len(self.global_shifts) == len(self.global_heads) == len(self.global_mlp) == 2):
            raise ValueError("global pathway needs exactly 2 blocks")
        for lam in (*self.lambda_in, *self.lambda_out):
            if not np.isfinite(lam):
                raise ValueError(f"fusion weights must be finite, got {lam}")

    def focal_blocks(self) -> list[BlockConfig]:
        return [
            BlockConfig(self.dim, h, m, self.window, s)
            for s, h, m in zip(self.focal_shifts, self.focal_heads, self.focal_mlp)
        ]

    def global_blocks(self) -> list[BlockConfig]:
        return [
            BlockConfig(self.dim, h, m, self.window, s)
            for s, h, m in zip(self.global_shifts, self.global_heads, self.global_mlp)
        ]

    @property
    def uses_focal(self) -> bool:
        return self.lambda_in[1] != 0 or self.lambda_out[1] != 0

    @property
    def uses_global(self) -> bool:
        return self.lambda_in[0] != 0 or self.lambda_out[0] != 0

    def focal_only(self) -> "GlobalFocalConfig":
        return replace(self, lambda_in=(0.0, 1.0), lambda_out=(0.0, 1.0))

    def global_only(self) -> "GlobalFocalConfig":
        return replace(self, lambda_in=(1.0, 0.0), lambda_out=(1.0, 0.0))


def twl_combine(g_out: Tensor, f_out: Tensor, lam1: float, lam2: float) -> Tensor:
    """``lam1 * g_out + lam2 * f_out``."""
    if g_out.shape != f_out.shape:
        raise ShapeError(f"twl_combine: shapes {g_out.shape} and {f_out.shape} differ")
    return g_out * lam1 + f_out * lam2


@dataclass
class SemaState:
    smoothed: np.ndarray | None = None
    initialized: bool = False

    def reset(self) -> None:
        self.smoothed = None
        self.initialized = False


def sema_decay(n: int) -> float:
    if n < 1:
        raise ValueError(f"sample count must be >= 1, got {n}")
    return 1.0 - 1.0 / n


def sema_update(state: SemaState, z: Tensor, n: int | None = None, decay: float | None = None) -> Tensor:
    """Blend the batch mean of ``z`` into ``state`` and re-center ``z`` on it.

    ``s = decay * s_prev + (1 - decay) * mean(z)``; the returned batch is
    ``z - mean(z) + s``. ``s_prev`` is a constant, so gradients only flow
    through the current batch. ``decay`` defaults to ``1 - 1/N`` with N the
    batch size (or ``n`` when given).
    """
    if z.shape[0] < 1:
        raise ValueError("sema_update: empty batch")
    if decay is None:
        decay = sema_decay(n if n is not None else z.shape[0])
    v = z.mean(axis=0)
    if state.initialized:
        if state.smoothed.shape != v.shape:
            raise ShapeError(
                f"sema_update: batch mean shape {v.shape} differs from state {state.smoothed.shape}"
            )
        prev = Tensor(state.smoothed.astype(v.dtype))
    else:
        prev = Tensor(v.data.copy())
    s = prev * decay + v * (1.0 - decay)
    state.smoothed = np.array(s.data, copy=True)
    state.initialized = True
    return z - v + s


def sema_apply(state: SemaState, z: Tensor, train: bool, mode: str = "track") -> Tensor:
    """Smoothing as wired into a fusion point; a no-op outside training."""
    if not train:
        return z
    if mode == "replace":
        return sema_update(state, z)
    sema_update(state, z.detach())
    return z


class GlobalFocalNet(Module):
    def __init__(self, cfg: GlobalFocalConfig, seed: int = 0, name: str = "net", patch: int = 8, channels: int = 1):
        self.cfg = cfg
        self.embed = PatchEmbed(stream(seed, name, "embed"), patch, channels, cfg.dim)
        self.focal = [SwinBlock(stream(seed, name, "focal", i), b) for i, b in enumerate(cfg.focal_blocks())]
        self.glob = [SwinBlock(stream(seed, name, "global", i), b) for i, b in enumerate(cfg.global_blocks())]
        self.sema_in = SemaState()
        self.sema_out = SemaState()

    def sema_states(self) -> dict[str, SemaState]:
        return {"sema_in": self.sema_in, "sema_out": self.sema_out}

    def focal_forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """Plain series f0 -> f1 -> f2 -> f3; returns the f1 and f3 outputs."""
        f1 = self.focal[1](self.focal[0](x))
        return f1, self.focal[3](self.focal[2](f1))

    def global_forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        g0 = self.glob[0](x)
        return g0, self.glob[1](g0)

    def stage_in(self, x: Tensor, train: bool, x_focal: Tensor | None = None) -> Tensor:
        lam_g, lam_f = self.cfg.lambda_in
        x_focal = x if x_focal is None else x_focal
        g = self.glob[0](x) if lam_g != 0 else None
        f = self.focal[1](self.focal[0](x_focal)) if lam_f != 0 else None
        z = _fuse(g, f, lam_g, lam_f)
        return sema_apply(self.sema_in, z, train, self.cfg.sema_mode)

    def stage_out(self, z_in: Tensor, train: bool) -> Tensor:
        lam_g, lam_f = self.cfg.lambda_out
        g = self.glob[1](z_in) if lam_g != 0 else None
        f = self.focal[3](self.focal[2](z_in)) if lam_f != 0 else None
        z = _fuse(g, f, lam_g, lam_f)
        return sema_apply(self.sema_out, z, train, self.cfg.sema_mode)

    def forward(self, x: Tensor, train: bool = False, x_focal: Tensor | None = None) -> tuple[Tensor, Tensor]:
        z_in = self.stage_in(x, train, x_focal)
        return z_in, self.stage_out(z_in, train)

    __call__ = forward


def _fuse(g: Tensor | None, f: Tensor | None, lam_g: float, lam_f: float) -> Tensor:
    if g is None and f is None:
        raise ValueError("both fusion weights are zero; the network has no active pathway")
    if f is None:
        return g * lam_g
    if g is None:
        return f * lam_f
    return twl_combine(g, f, lam_g, lam_f)


def network_forward(net: GlobalFocalNet, x: Tensor, train: bool = False, x_focal: Tensor | None = None):
    return net.forward(x, train, x_focal)
