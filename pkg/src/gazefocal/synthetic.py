"""Small synthetic radiograph-like sets with planted bright-region cues.

Each image is a low-contrast textured background with one bright square
blob at a random position. The class is the blob size (0 = small, 1 = large),
a cue that survives the translation-invariant pooling of the heads. The
attention region is the blob's bounding box; gaze samples are scattered
around the blob centre.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .hva import GazeRecord
from .rng import stream
from .training import Dataset


def make_synthetic(n: int = 32, size: int = 64, seed: int = 0):
    """Return ``(Dataset, gaze)`` with ``gaze[i]`` a list of GazeRecords for image i."""
    rng = stream(seed, "synthetic")
    # small vs large blob: ~2% vs ~20% of the image, so mean-pooled features separate
    radii = (max(1, size // 16), max(2, (size * 7) // 32))
    yy, xx = np.mgrid[0:size, 0:size]
    images, labels, regions, gaze = [], [], [], []
    for i in range(n):
        label = i % 2
        radius = radii[label]
        bg = 0.3 + 0.05 * rng.standard_normal((size, size))
        cx = int(rng.integers(radius + 1, size - radius - 1))
        cy = int(rng.integers(radius + 1, size - radius - 1))
        blob = (np.abs(xx - cx) <= radius) & (np.abs(yy - cy) <= radius)
        img = np.where(blob, 0.9, bg)
        images.append(np.clip(img, 0, 1).astype(np.float32)[..., None])
        labels.append(label)
        side = (2 * radius + 1) / size
        regions.append(((cx + 0.5) / size, (cy + 0.5) / size, side, side))
        pts = rng.normal(0.0, radius / 2, size=(40, 2))
        gaze.append(
            [
                GazeRecord(f"img{i:03d}", int(np.clip(round(cx + dx), 0, size - 1)), int(np.clip(round(cy + dy), 0, size - 1)))
                for dx, dy in pts
            ]
        )
    data = Dataset(np.stack(images), np.array(labels, dtype=np.int64), np.array(regions, dtype=np.float32))
    return data, gaze


def write_synthetic(root, n: int = 32, size: int = 64, seed: int = 0) -> Path:
    """Write PNGs, ``manifest.csv`` (with regions) and ``gaze.csv`` under ``root``."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    data, gaze = make_synthetic(n, size, seed)
    with (root / "manifest.csv").open("w", encoding="utf-8") as fh:
        fh.write("image_path,label,cx,cy,h,w\n")
        for i in range(n):
            name = f"images/img{i:03d}.png"
            Image.fromarray(np.round(data.images[i, :, :, 0] * 255).astype(np.uint8), mode="L").save(root / name)
            label = "small" if data.labels[i] == 0 else "large"
            fh.write(f"{name},{label},{','.join(repr(float(v)) for v in data.regions[i])}\n")
    with (root / "gaze.csv").open("w", encoding="utf-8") as fh:
        fh.write("image_id,x,y,timestamp\n")
        for records in gaze:
            for t, r in enumerate(records):
                fh.write(f"{r.image_id},{r.x},{r.y},{t * 4}\n")
    return root
