"""Manifest and gaze CSV ingestion.

Manifest CSV header: ``image_path,label`` plus optional ``cx,cy,h,w``
region columns and an optional ``split`` column (``train``/``val``).
Image paths are resolved against ``image_root``. Labels are mapped to
class indices through a vocabulary sorted lexicographically as strings.
"""

from __future__ import annotations

import csv
import hashlib
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .hva import GazeRecord
from .regions import AttentionRegion
from .training import Dataset

REGION_COLUMNS = ("cx", "cy", "h", "w")


class DataError(ValueError):
    pass


@dataclass
class ManifestRow:
    image_path: str
    label: str
    region: AttentionRegion | None = None
    split: str | None = None


@dataclass
class Manifest:
    rows: list[ManifestRow]
    vocabulary: list[str]

    @property
    def n_classes(self) -> int:
        return len(self.vocabulary)

    def label_index(self) -> np.ndarray:
        lookup = {lab: i for i, lab in enumerate(self.vocabulary)}
        return np.array([lookup[r.label] for r in self.rows], dtype=np.int64)

    @property
    def has_regions(self) -> bool:
        return bool(self.rows) and all(r.region is not None for r in self.rows)


def read_manifest(path, vocabulary: list[str] | None = None) -> Manifest:
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        if "image_path" not in header or "label" not in header:
            raise DataError(f"{path}: header must start with image_path,label; got {header}")
        has_region = all(c in header for c in REGION_COLUMNS)
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            region = None
            if has_region and all(rec.get(c) not in (None, "") for c in REGION_COLUMNS):
                try:
                    region = AttentionRegion(*(float(rec[c]) for c in REGION_COLUMNS))
                except ValueError:
                    raise DataError(f"{path}:{lineno}: region columns must be numbers") from None
            split = (rec.get("split") or "").strip() or None
            rows.append(ManifestRow(rec["image_path"].strip(), rec["label"].strip(), region, split))
    if not rows:
        raise DataError(f"{path}: manifest is empty")
    if vocabulary is None:
        vocabulary = sorted({r.label for r in rows})
    else:
        unknown = sorted({r.label for r in rows} - set(vocabulary))
        if unknown:
            raise DataError(f"{path}: unknown labels {unknown}; known {vocabulary}")
    return Manifest(rows, list(vocabulary))


def load_image(path, size: int, channels: int = 1) -> np.ndarray:
    """Decode to float32 ``(size, size, channels)`` in [0, 1], bilinear resize."""
    try:
        with Image.open(path) as img:
            img = img.convert("L" if channels == 1 else "RGB")
            if img.size != (size, size):
                img = img.resize((size, size), Image.BILINEAR)
            arr = np.asarray(img, dtype=np.float32) / 255.0
    except FileNotFoundError:
        raise DataError(f"image not found: {path}") from None
    except (UnidentifiedImageError, OSError) as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from None
    return arr[..., None] if arr.ndim == 2 else arr


def load_manifest(path, image_root, image_size: int, channels: int = 1, vocabulary: list[str] | None = None):
    """Read the manifest and decode its images into a :class:`Dataset`."""
    manifest = read_manifest(path, vocabulary)
    root = Path(image_root) if image_root is not None else Path(path).parent
    images = np.stack([load_image(root / r.image_path, image_size, channels) for r in manifest.rows])
    regions = None
    if manifest.has_regions:
        regions = np.array([r.region for r in manifest.rows], dtype=np.float32)
    return manifest, Dataset(images, manifest.label_index(), regions)


def hash_fraction(key: str) -> float:
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2**64


def split_indices(manifest: Manifest, val_fraction: float = 0.15) -> tuple[np.ndarray, np.ndarray]:
    """``split`` column when present, else a stable hash of the image path."""
    if any(r.split for r in manifest.rows):
        val = [i for i, r in enumerate(manifest.rows) if r.split in ("val", "valid", "validation")]
        train = [i for i, r in enumerate(manifest.rows) if r.split in (None, "train")]
    else:
        val = [i for i, r in enumerate(manifest.rows) if hash_fraction(r.image_path) < val_fraction]
        train = [i for i, r in enumerate(manifest.rows) if hash_fraction(r.image_path) >= val_fraction]
    return np.array(train, dtype=np.int64), np.array(val, dtype=np.int64)


def read_gaze_csv(path) -> dict[str, list[GazeRecord]]:
    """Group ``image_id,x,y[,timestamp]`` rows by image, preserving file order."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"gaze file not found: {path}")
    out: dict[str, list[GazeRecord]] = defaultdict(list)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        if not {"image_id", "x", "y"} <= set(header):
            raise DataError(f"{path}: header must contain image_id,x,y; got {header}")
        for lineno, rec in enumerate(reader, start=2):
            try:
                ts = rec.get("timestamp")
                out[rec["image_id"]].append(
                    GazeRecord(rec["image_id"], int(float(rec["x"])), int(float(rec["y"])), float(ts) if ts else None)
                )
            except ValueError:
                raise DataError(f"{path}:{lineno}: x and y must be numeric") from None
    return dict(out)


def write_regions_csv(path, regions: dict[str, AttentionRegion]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("image_id",) + REGION_COLUMNS)
        for image_id, r in regions.items():
            writer.writerow((image_id, *(repr(float(v)) for v in r)))


def read_regions_csv(path) -> dict[str, AttentionRegion]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return {
            rec["image_id"]: AttentionRegion(*(float(rec[c]) for c in REGION_COLUMNS))
            for rec in csv.DictReader(fh)
        }


def attach_regions(manifest: Manifest, regions: dict[str, AttentionRegion]) -> Manifest:
    """Fill missing manifest regions by image id (full path, file name, or stem)."""
    for row in manifest.rows:
        if row.region is not None:
            continue
        p = Path(row.image_path)
        for key in (row.image_path, p.name, p.stem):
            if key in regions:
                row.region = regions[key]
                break
    return manifest
