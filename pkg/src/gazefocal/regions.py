"""Attention regions as normalized (cx, cy, h, w) keypoints."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np


class AttentionRegion(NamedTuple):
    cx: float
    cy: float
    h: float
    w: float

    def corners(self) -> tuple[float, float, float, float]:
        """``(x0, y0, x1, y1)``."""
        return (self.cx - self.w / 2, self.cy - self.h / 2, self.cx + self.w / 2, self.cy + self.h / 2)

    @classmethod
    def from_corners(cls, x0: float, y0: float, x1: float, y1: float) -> "AttentionRegion":
        return cls((x0 + x1) / 2, (y0 + y1) / 2, y1 - y0, x1 - x0)

    def clipped(self) -> "AttentionRegion":
        x0, y0, x1, y1 = (min(max(c, 0.0), 1.0) for c in self.corners())
        return AttentionRegion.from_corners(x0, y0, x1, y1)

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=np.float64)
