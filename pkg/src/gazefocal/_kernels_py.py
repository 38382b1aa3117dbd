"""Pure-Python/numpy versions of the compiled kernels.

``correlate_rows(padded, kernel)``: valid-mode correlation of every row of
``padded`` with ``kernel``; output width is ``padded.shape[1] - len(kernel) + 1``.

``label_components(mask, connectivity)``: two-pass union-find labeling.
Labels are 1..count, numbered by the raster position of each component's
first pixel; background is 0.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def correlate_rows(padded: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    windows = sliding_window_view(np.ascontiguousarray(padded, dtype=np.float64), len(kernel), axis=1)
    return np.ascontiguousarray(windows @ np.asarray(kernel, dtype=np.float64))


def _find(parent: list[int], x: int) -> int:
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        parent[x], x = root, parent[x]
    return root


def label_components(mask: np.ndarray, connectivity: int = 8) -> tuple[np.ndarray, int]:
    m = np.asarray(mask, dtype=bool)
    h, w = m.shape
    labels = [[0] * w for _ in range(h)]
    parent = [0]
    offsets = [(-1, 0), (0, -1)]
    if connectivity == 8:
        offsets += [(-1, -1), (-1, 1)]
    rows = m.tolist()
    for i in range(h):
        row = rows[i]
        for j in range(w):
            if not row[j]:
                continue
            lab = 0
            for di, dj in offsets:
                ni, nj = i + di, j + dj
                if ni < 0 or nj < 0 or nj >= w:
                    continue
                other = labels[ni][nj]
                if not other:
                    continue
                if not lab:
                    lab = other
                    continue
                a, b = _find(parent, lab), _find(parent, other)
                if a < b:
                    parent[b] = a
                elif b < a:
                    parent[a] = b
            if not lab:
                lab = len(parent)
                parent.append(lab)
            labels[i][j] = lab
    remap = {}
    for i in range(h):
        for j in range(w):
            lab = labels[i][j]
            if lab:
                root = _find(parent, lab)
                if root not in remap:
                    remap[root] = len(remap) + 1
                labels[i][j] = remap[root]
    return np.array(labels, dtype=np.int32).reshape(h, w), len(remap)
