"""Radiologist gaze samples -> attention heatmap -> attention region.

Pipeline: count samples per pixel, smooth with a separable Gaussian
(radius ceil(4 sigma), half-sample symmetric padding), min-max quantize to
0..255, threshold, keep the largest connected component and return its
bounding box as normalized (cx, cy, h, w).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

from . import kernels
from .regions import AttentionRegion


class GazeRecord(NamedTuple):
    image_id: str
    x: int
    y: int
    timestamp: float | None = None


@dataclass(frozen=True)
class HvaConfig:
    sigma: float = 64.0
    threshold: int = 140
    connectivity: int = 8

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not 0 <= self.threshold <= 255:
            raise ValueError(f"threshold must lie in [0, 255], got {self.threshold}")
        if self.connectivity not in (4, 8):
            raise ValueError(f"connectivity must be 4 or 8, got {self.connectivity}")


class NoAttentionRegion(ValueError):
    pass


class GazeOutOfRange(ValueError):
    pass


def accumulate(points: Iterable, height: int, width: int) -> np.ndarray:
    """Per-pixel sample counts; ``x`` is the column and ``y`` the row."""
    heat = np.zeros((height, width), dtype=np.float64)
    for i, p in enumerate(points):
        x, y = int(p.x), int(p.y)
        if not (0 <= x < width and 0 <= y < height):
            raise GazeOutOfRange(f"gaze sample {i} at (x={x}, y={y}) lies outside {width}x{height}")
        heat[y, x] += 1
    return heat


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(4 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_filter(heat: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    k = gaussian_kernel(sigma)
    r = len(k) // 2
    h = np.asarray(heat, dtype=np.float64)
    rows = kernels.correlate_rows(np.pad(h, ((0, 0), (r, r)), mode="symmetric"), k)
    cols = kernels.correlate_rows(np.ascontiguousarray(np.pad(rows, ((r, r), (0, 0)), mode="symmetric").T), k)
    return np.ascontiguousarray(cols.T)


def quantize(heat: np.ndarray) -> np.ndarray:
    """Min-max scale to 0..255 (round half up); a constant map becomes 255, or 0 if zero."""
    h = np.asarray(heat, dtype=np.float64)
    if (h < 0).any():
        raise ValueError("heatmap values must be non-negative")
    if h.size == 0:
        return np.zeros(h.shape, dtype=np.uint8)
    lo, hi = h.min(), h.max()
    if hi == lo:
        return np.full(h.shape, 255 if hi > 0 else 0, dtype=np.uint8)
    return np.floor((h - lo) / (hi - lo) * 255.0 + 0.5).astype(np.uint8)


def largest_component_bbox(q: np.ndarray, threshold: int = 140, connectivity: int = 8) -> AttentionRegion:
    """Tight box of the largest component of ``q >= threshold``.

    Ties on area go to the component whose first pixel comes first in raster
    order.
    """
    q = np.asarray(q)
    mask = np.ascontiguousarray(q >= threshold, dtype=np.uint8)
    labels, count = kernels.label_components(mask, connectivity)
    if count == 0:
        raise NoAttentionRegion("no attention region above threshold")
    areas = np.bincount(labels.ravel(), minlength=count + 1)
    areas[0] = 0
    best = int(np.argmax(areas))
    rows, cols = np.nonzero(labels == best)
    height, width = q.shape
    r0, r1, c0, c1 = rows.min(), rows.max() + 1, cols.min(), cols.max() + 1
    return AttentionRegion(
        cx=(c0 + c1) / 2 / width,
        cy=(r0 + r1) / 2 / height,
        h=(r1 - r0) / height,
        w=(c1 - c0) / width,
    )


def heatmap(points, height: int, width: int, cfg: HvaConfig = HvaConfig()) -> np.ndarray:
    """Quantized attention heatmap (uint8)."""
    return quantize(gaussian_filter(accumulate(points, height, width), cfg.sigma))


def hva_pipeline(points, height: int, width: int, cfg: HvaConfig = HvaConfig()) -> AttentionRegion:
    points = list(points)
    if not points:
        raise NoAttentionRegion("no gaze samples")
    return largest_component_bbox(heatmap(points, height, width, cfg), cfg.threshold, cfg.connectivity)
