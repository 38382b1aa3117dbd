"""``gazefocal`` command line: preprocess-gaze, train-teacher, train-student,
evaluate, predict (plus config-schema and make-synthetic helpers)."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import metrics
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, build_system, config_schema, load_config
from .data import (
    DataError,
    attach_regions,
    load_manifest,
    read_gaze_csv,
    read_manifest,
    read_regions_csv,
    split_indices,
    write_regions_csv,
)
from .hva import GazeOutOfRange, HvaConfig, NoAttentionRegion, heatmap, largest_component_bbox
from .system import predict
from .training import (
    TrainingError,
    eval_student_loss,
    eval_teacher_loss,
    fit,
    hvat_train_step,
    student_optimizer,
    student_train_step,
    teacher_optimizer,
)

log = logging.getLogger("gazefocal")

HANDLED = (ConfigError, DataError, CheckpointError, TrainingError, NoAttentionRegion, GazeOutOfRange)


def _run_config(args) -> RunConfig:
    return load_config(args.config) if getattr(args, "config", None) else RunConfig()


def _jsonl_writer(path):
    fh = open(path, "w", encoding="utf-8") if path else None

    def write(record: dict):
        line = json.dumps(record, sort_keys=True)
        if fh:
            fh.write(line + "\n")
            fh.flush()
        else:
            print(line)

    return write, fh


def cmd_preprocess_gaze(args) -> int:
    run = _run_config(args)
    cfg = run.hva()
    if args.sigma is not None or args.threshold is not None:
        sigma = cfg.sigma if args.sigma is None else args.sigma
        threshold = cfg.threshold if args.threshold is None else args.threshold
        cfg = HvaConfig(sigma, threshold, cfg.connectivity)
    width = args.width or run.image_size
    height = args.height or run.image_size
    gaze = read_gaze_csv(args.gaze)
    if not gaze:
        raise DataError(f"{args.gaze}: no gaze samples")
    if args.heatmaps:
        Path(args.heatmaps).mkdir(parents=True, exist_ok=True)
    regions = {}
    for image_id, points in gaze.items():
        q = heatmap(points, height, width, cfg)
        if args.heatmaps:
            Image.fromarray(q, mode="L").save(Path(args.heatmaps) / f"{Path(image_id).stem}.png")
        regions[image_id] = largest_component_bbox(q, cfg.threshold, cfg.connectivity)
    write_regions_csv(args.out, regions)
    return 0


def _load_split(args, run: RunConfig, vocabulary=None):
    manifest, data = load_manifest(args.manifest, args.image_root, run.image_size, run.channels, vocabulary)
    train_idx, val_idx = split_indices(manifest, run.val_fraction)
    return manifest, data, data.subset(train_idx), data.subset(val_idx) if len(val_idx) else None


def cmd_train_teacher(args) -> int:
    run = _run_config(args)
    manifest = read_manifest(args.manifest)
    if args.regions:
        attach_regions(manifest, read_regions_csv(args.regions))
    if not manifest.has_regions:
        raise TrainingError("gaze pre-training needs a region (cx,cy,h,w) for every manifest row; pass --regions")
    _, data = load_manifest(args.manifest, args.image_root, run.image_size, run.channels)
    data.regions = np.array([r.region for r in manifest.rows], dtype=np.float32)
    train_idx, val_idx = split_indices(manifest, run.val_fraction)
    train, val = data.subset(train_idx), data.subset(val_idx) if len(val_idx) else None
    system = build_system(run, teacher_classes=manifest.n_classes)
    optimizer = teacher_optimizer(system, run.schedule())
    write, fh = _jsonl_writer(args.log)
    try:
        fit(
            system, hvat_train_step, optimizer, train, val, eval_teacher_loss,
            epochs=run.epochs, batch_size=run.batch_size, patience=run.early_stop_patience,
            seed=run.seed, phase="teacher", on_epoch=write,
        )
    finally:
        if fh:
            fh.close()
    meta = {"stage": "teacher", "teacher_vocabulary": manifest.vocabulary}
    save_checkpoint(args.out, Checkpoint(system, run, meta, optimizer.state))
    return 0


def cmd_train_student(args) -> int:
    run = _run_config(args)
    teacher = load_checkpoint(args.teacher_checkpoint)
    manifest, data, train, val = _load_split(args, run)
    system = build_system(run, manifest.n_classes, teacher.system.cfg.teacher_classes)
    source = teacher.system.teacher_parameters()
    for name, p in system.teacher_parameters().items():
        if source[name].shape != p.shape:
            raise CheckpointError(f"teacher parameter {name} has shape {source[name].shape}, config implies {p.shape}")
        p.data = source[name].data.copy()
    for name, state in system.sema_states().items():
        if name.startswith("teacher."):
            src = teacher.system.sema_states()[name]
            state.smoothed = None if src.smoothed is None else src.smoothed.copy()
            state.initialized = src.initialized
    optimizer = student_optimizer(system, run.schedule())
    write, fh = _jsonl_writer(args.log)

    def on_epoch(record):
        subset, key = (val, "val") if val is not None else (train, "train")
        probs, _ = predict(system, subset.images)
        record[f"{key}_accuracy"] = metrics.accuracy(subset.labels, probs)
        write(record)

    try:
        fit(
            system, student_train_step, optimizer, train, val, eval_student_loss,
            epochs=run.epochs, batch_size=run.batch_size, patience=run.early_stop_patience,
            seed=run.seed, phase="student", on_epoch=on_epoch,
        )
    finally:
        if fh:
            fh.close()
    meta = {
        "stage": "student",
        "vocabulary": manifest.vocabulary,
        "teacher_vocabulary": teacher.meta.get("teacher_vocabulary", []),
    }
    save_checkpoint(args.out, Checkpoint(system, run, meta, optimizer.state))
    return 0


def _predict_manifest(args):
    ckpt = load_checkpoint(args.checkpoint)
    vocabulary = ckpt.meta.get("vocabulary")
    if not vocabulary:
        raise CheckpointError(f"{args.checkpoint}: not a trained student checkpoint (no class vocabulary)")
    manifest = read_manifest(args.manifest, vocabulary)
    _, data = load_manifest(args.manifest, args.image_root, ckpt.run.image_size, ckpt.run.channels, vocabulary)
    probs, regions = [], []
    for start in range(0, len(data), ckpt.run.batch_size):
        p, r = predict(ckpt.system, data.images[start : start + ckpt.run.batch_size])
        probs.append(p)
        regions.append(r)
    return manifest, data, np.concatenate(probs), np.concatenate(regions)


def cmd_predict(args) -> int:
    manifest, _, probs, regions = _predict_manifest(args)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for row, p, r in zip(manifest.rows, probs, regions):
            record = {
                "image_path": row.image_path,
                "classes": manifest.vocabulary,
                "probs": [float(v) for v in p],
                "prediction": manifest.vocabulary[int(np.argmax(p))],
                "region": dict(zip(("cx", "cy", "h", "w"), (float(v) for v in r))),
            }
            out.write(json.dumps(record, sort_keys=True) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def _read_predictions(path, manifest_path):
    records = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                try:
                    rec = json.loads(line)
                    records[rec["image_path"]] = rec
                except (json.JSONDecodeError, KeyError):
                    raise DataError(f"{path}:{lineno}: malformed prediction record") from None
    if not records:
        raise DataError(f"{path}: no predictions")
    vocabulary = next(iter(records.values()))["classes"]
    manifest = read_manifest(manifest_path, vocabulary)
    missing = [r.image_path for r in manifest.rows if r.image_path not in records]
    if missing:
        raise DataError(f"{path}: no prediction for {missing[:3]}")
    probs = np.array([records[r.image_path]["probs"] for r in manifest.rows], dtype=np.float64)
    return manifest.label_index(), probs


def cmd_evaluate(args) -> int:
    if args.predictions:
        labels, probs = _read_predictions(args.predictions, args.manifest)
    else:
        manifest, data, probs, _ = _predict_manifest(args)
        labels = data.labels
    report = metrics.report(labels, probs)
    text = json.dumps(report, sort_keys=True, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    return 0


def cmd_config_schema(args) -> int:
    print(json.dumps(config_schema(), indent=2))
    return 0


def cmd_make_synthetic(args) -> int:
    from .synthetic import write_synthetic

    write_synthetic(args.out, args.n, args.size, args.seed)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gazefocal", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess-gaze", help="gaze CSV -> per-image attention regions")
    p.add_argument("--gaze", required=True)
    p.add_argument("--out", required=True, help="region CSV to write")
    p.add_argument("--config")
    p.add_argument("--heatmaps", help="directory for 8-bit heatmap PNGs")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--threshold", type=int)
    p.set_defaults(func=cmd_preprocess_gaze)

    p = sub.add_parser("train-teacher", help="gaze-supervised teacher pre-training")
    p.add_argument("--config")
    p.add_argument("--manifest", required=True)
    p.add_argument("--image-root")
    p.add_argument("--regions", help="region CSV from preprocess-gaze")
    p.add_argument("--out", required=True)
    p.add_argument("--log", help="JSON-lines training log (default: stdout)")
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("train-student", help="student training against a frozen teacher")
    p.add_argument("--config")
    p.add_argument("--manifest", required=True)
    p.add_argument("--image-root")
    p.add_argument("--teacher-checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log")
    p.set_defaults(func=cmd_train_student)

    p = sub.add_parser("evaluate", help="metrics JSON for a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--image-root")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint")
    src.add_argument("--predictions", help="JSON lines written by predict")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="per-image probabilities and regions as JSON lines")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--image-root")
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("config-schema", help="print the config JSON schema")
    p.set_defaults(func=cmd_config_schema)

    p = sub.add_parser("make-synthetic", help="write a synthetic demo set")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=32)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_synthetic)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except HANDLED as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
