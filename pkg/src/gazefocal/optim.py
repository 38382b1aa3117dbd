"""Adam and the exponential learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, Tensor


@dataclass(frozen=True)
class LrSchedule:
    initial_lr: float = 1e-2
    decay_steps: int = 100_000
    decay_rate: float = 0.2

    def __post_init__(self):
        if self.initial_lr <= 0:
            raise ValueError(f"initial_lr must be positive, got {self.initial_lr}")
        if self.decay_steps <= 0:
            raise ValueError(f"decay_steps must be positive, got {self.decay_steps}")
        if not 0 < self.decay_rate < 1:
            raise ValueError(f"decay_rate must lie in (0, 1), got {self.decay_rate}")


def lr_at(schedule: LrSchedule, step: int) -> float:
    """Continuous (non-staircase) exponential decay."""
    if step < 0:
        raise ValueError(f"step must be non-negative, got {step}")
    return schedule.initial_lr * schedule.decay_rate ** (step / schedule.decay_steps)


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> AdamState:
    """One bias-corrected Adam update, applied in place to ``params``."""
    if lr <= 0:
        raise ValueError(f"lr must be positive, got {lr}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1 - b1**state.step
    corr2 = 1 - b2**state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ShapeError(f"adam_step: gradient {g.shape} does not match parameter {name} {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        update = lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
        p.data -= update.astype(p.dtype)
    return state


class Adam:
    """Adam bound to a fixed set of named parameters."""

    def __init__(self, params: dict[str, Tensor], schedule: LrSchedule | None = None, **kwargs):
        self.params = dict(params)
        self.schedule = schedule or LrSchedule()
        self.state = AdamState(**kwargs)

    @property
    def lr(self) -> float:
        return lr_at(self.schedule, self.state.step)

    def step(self, grads: dict[str, np.ndarray]) -> None:
        adam_step(self.params, grads, self.state, self.lr)
