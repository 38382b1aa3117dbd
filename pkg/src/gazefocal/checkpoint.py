"""Single-file checkpoints.

Layout: 8-byte little-endian header length, a UTF-8 JSON header, then the
raw little-endian float32 payload. The header's ``tensors`` entry maps each
name to ``{"dtype": "f32", "shape": [...], "byte_offset": n}`` (offsets are
relative to the payload start). Names are ``param/...``, ``sema/...`` and
``adam.m/...``/``adam.v/...``. The header also carries the run config,
format version and bookkeeping (vocabularies, Adam step, SEMA flags).

Headers are serialized with sorted keys, so save -> load -> save is
byte-identical.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig, build_system
from .optim import AdamState
from .system import StudentTeacher

FORMAT = "gazefocal-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    system: StudentTeacher
    run: RunConfig
    meta: dict = field(default_factory=dict)
    adam: AdamState | None = None


def _tensors(ckpt: Checkpoint) -> dict[str, np.ndarray]:
    out = {f"param/{k}": p.data for k, p in ckpt.system.named_parameters()}
    for k, s in ckpt.system.sema_states().items():
        if s.initialized:
            out[f"sema/{k}"] = s.smoothed
    if ckpt.adam is not None:
        for k, m in ckpt.adam.m.items():
            out[f"adam.m/{k}"] = m
            out[f"adam.v/{k}"] = ckpt.adam.v[k]
    return out


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    tensors = _tensors(ckpt)
    entries = {}
    chunks = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        entries[name] = {"dtype": "f32", "shape": list(arr.shape), "byte_offset": offset}
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    cfg = ckpt.system.cfg
    header = {
        "format": FORMAT,
        "version": VERSION,
        "config": ckpt.run.to_dict(),
        "classes": {"student": cfg.n_classes, "teacher": cfg.teacher_classes},
        "meta": ckpt.meta,
        "sema": {k: s.initialized for k, s in ckpt.system.sema_states().items()},
        "adam": None
        if ckpt.adam is None
        else {"step": ckpt.adam.step, "beta1": ckpt.adam.beta1, "beta2": ckpt.adam.beta2, "eps": ckpt.adam.eps},
        "payload_bytes": offset,
        "tensors": entries,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for chunk in chunks:
            fh.write(chunk)


def read_header(path) -> tuple[dict, bytes]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if len(raw) < 8:
        raise CheckpointError(f"{path}: truncated header length")
    (n,) = struct.unpack("<Q", raw[:8])
    if 8 + n > len(raw):
        raise CheckpointError(f"{path}: header length {n} exceeds file size {len(raw)}")
    try:
        header = json.loads(raw[8 : 8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from None
    if header.get("format") != FORMAT:
        raise CheckpointError(f"{path}: not a {FORMAT} file")
    if header.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported version {header.get('version')} (expected {VERSION})")
    return header, raw[8 + n :]


def _read_tensor(name: str, entry: dict, payload: bytes, path) -> np.ndarray:
    if entry.get("dtype") != "f32":
        raise CheckpointError(f"{path}: tensor {name} has unsupported dtype {entry.get('dtype')}")
    shape = tuple(int(s) for s in entry["shape"])
    offset = entry["byte_offset"]
    nbytes = 4 * int(np.prod(shape, dtype=np.int64))
    if not isinstance(offset, int) or offset < 0 or offset % 4 or offset + nbytes > len(payload):
        raise CheckpointError(f"{path}: tensor {name} at byte_offset {offset} (+{nbytes}) lies outside the payload")
    return np.frombuffer(payload, dtype="<f4", count=nbytes // 4, offset=offset).reshape(shape).astype(np.float32)


def load_checkpoint(path, expect_classes: int | None = None) -> Checkpoint:
    header, payload = read_header(path)
    if len(payload) != header.get("payload_bytes"):
        raise CheckpointError(f"{path}: payload is {len(payload)} bytes, header says {header.get('payload_bytes')}")
    run = RunConfig.from_dict(header["config"])
    classes = header["classes"]
    if expect_classes is not None and classes["student"] != expect_classes:
        raise CheckpointError(f"{path}: checkpoint has {classes['student']} classes, data has {expect_classes}")
    system = build_system(run, classes["student"], classes["teacher"])
    entries = header["tensors"]
    params = dict(system.named_parameters())
    expected = {f"param/{k}" for k in params}
    stored = {k for k in entries if k.startswith("param/")}
    if expected != stored:
        missing, extra = sorted(expected - stored), sorted(stored - expected)
        raise CheckpointError(f"{path}: parameter set differs from config (missing {missing[:3]}, unexpected {extra[:3]})")
    for name, p in params.items():
        arr = _read_tensor(f"param/{name}", entries[f"param/{name}"], payload, path)
        if arr.shape != p.shape:
            raise CheckpointError(f"{path}: {name} has shape {arr.shape}, config implies {p.shape}")
        p.data = arr
    for name, state in system.sema_states().items():
        if header["sema"].get(name):
            state.smoothed = _read_tensor(f"sema/{name}", entries[f"sema/{name}"], payload, path)
            state.initialized = True
    adam = None
    if header.get("adam") is not None:
        a = header["adam"]
        adam = AdamState(beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"], step=a["step"])
        for key, entry in sorted(entries.items()):
            if key.startswith("adam.m/"):
                pname = key[len("adam.m/") :]
                adam.m[pname] = _read_tensor(key, entry, payload, path)
                adam.v[pname] = _read_tensor(f"adam.v/{pname}", entries[f"adam.v/{pname}"], payload, path)
    return Checkpoint(system, run, header.get("meta", {}), adam)
