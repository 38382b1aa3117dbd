import json
import struct
import subprocess
import sys
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from gazefocal import cli
from gazefocal.checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from gazefocal.config import ConfigError, RunConfig, build_system, config_schema, load_config, parse_config
from gazefocal.data import DataError, read_gaze_csv, read_manifest, read_regions_csv, split_indices
from gazefocal.hva import HvaConfig, hva_pipeline
from gazefocal.optim import AdamState
from gazefocal.synthetic import make_synthetic, write_synthetic
from gazefocal.system import PRESETS, plain_views, predict

TINY = """
image_size = 32
dim = 8
batch_size = 8
epochs = 2
early_stop_patience = 5
seed = 3
"""


def _system(extra=""):
    run = parse_config(TINY + extra)
    return run, build_system(run, n_classes=2, teacher_classes=2)


# configuration


def test_empty_config_gives_defaults():
    run = parse_config("")
    assert (run.batch_size, run.epochs, run.lr, run.decay_steps, run.decay_rate, run.early_stop_patience) == (
        64, 50, 1e-2, 100_000, 0.2, 20,
    )
    assert run == RunConfig()
    assert run.hva() == HvaConfig(64.0, 140, 8)
    assert run.image_size == 256 and run.preset == "full"


def test_config_file_and_section_header(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[run]\n# comment\nbatch_size = 16  # inline\nlambda_in = [0.25, 0.75]\npreset = focal-hvat\n")
    run = load_config(path)
    assert run.batch_size == 16 and run.lambda_in == (0.25, 0.75) and run.preset == "focal-hvat"
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.ini")


def test_config_errors():
    with pytest.raises(ConfigError, match="divisible"):
        parse_config("image_size = 60\npatch = 8")
    with pytest.raises(ConfigError, match="window"):
        parse_config("image_size = 40\npatch = 8")
    with pytest.raises(ConfigError, match="unknown config keys: bogus"):
        parse_config("bogus = 1")
    with pytest.raises(ConfigError, match="integer"):
        parse_config("epochs = 2.5")
    with pytest.raises(ConfigError, match="line 2"):
        parse_config("epochs = 2\nthis line has no separator")
    with pytest.raises(ConfigError, match="preset"):
        parse_config("preset = everything")
    with pytest.raises(ConfigError, match="sema_mode"):
        parse_config("sema_mode = sometimes")
    with pytest.raises(ConfigError, match="augment.teacher_global.gamma"):
        parse_config("augment.teacher_global.gamma = 2")
    with pytest.raises(ConfigError, match="lower bound"):
        parse_config("augment.student_focal.contrast_lower = 5")


def test_augment_override():
    run = parse_config("augment.teacher_focal.contrast_lower = 2.5")
    assert run.profiles()["teacher_focal"].contrast_lower == 2.5
    assert run.profiles()["teacher_global"].contrast_lower == 2.0


def test_presets_map_to_ablation_rows():
    assert parse_config("preset = global-only").system_config(2).student.lambda_out == (1.0, 0.0)
    assert parse_config("preset = global-only").system_config(2).student.lambda_in == (1.0, 0.0)
    for name in PRESETS:
        run = parse_config(TINY + f"preset = {name}")
        probs, _ = predict(build_system(run, 2, 2), np.zeros((1, 32, 32, 1), np.float32))
        assert probs.shape == (1, 2)


def test_schema_validates_defaults():
    schema = config_schema()
    jsonschema.validate(RunConfig().to_dict(), schema)
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate({"batch_size": "big"}, schema)
    assert schema["properties"]["preset"]["enum"] == list(PRESETS)


# checkpoints


def test_checkpoint_roundtrip_is_byte_identical(tmp_path, rng):
    run, system = _system()
    # populate the smoothing buffers and some Adam state
    system.forward(plain_views(rng.random((2, 32, 32, 1)).astype(np.float32)), train=True)
    adam = AdamState(step=3)
    for k, p in system.student_parameters().items():
        adam.m[k] = rng.standard_normal(p.shape).astype(np.float32)
        adam.v[k] = rng.random(p.shape).astype(np.float32)
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(a, Checkpoint(system, run, {"vocabulary": ["x", "y"]}, adam))
    loaded = load_checkpoint(a)
    save_checkpoint(b, loaded)
    assert a.read_bytes() == b.read_bytes()
    assert loaded.adam.step == 3 and loaded.meta == {"vocabulary": ["x", "y"]}


def test_checkpoint_preserves_predictions(tmp_path, rng):
    run, system = _system()
    x = rng.random((10, 32, 32, 1)).astype(np.float32)
    before = predict(system, x)
    save_checkpoint(tmp_path / "c.ckpt", Checkpoint(system, run))
    after = predict(load_checkpoint(tmp_path / "c.ckpt").system, x)
    np.testing.assert_array_equal(before[0], after[0])
    np.testing.assert_array_equal(before[1], after[1])


def test_checkpoint_layout(tmp_path):
    run, system = _system()
    path = tmp_path / "c.ckpt"
    save_checkpoint(path, Checkpoint(system, run))
    raw = path.read_bytes()
    (n,) = struct.unpack("<Q", raw[:8])
    header = json.loads(raw[8 : 8 + n])
    entry = header["tensors"]["param/student.heads.classifier.weight"]
    assert entry["dtype"] == "f32"
    w = np.frombuffer(raw[8 + n :], "<f4", count=int(np.prod(entry["shape"])), offset=entry["byte_offset"])
    np.testing.assert_array_equal(w.reshape(entry["shape"]), system.student.heads.classifier.weight.data)


def _rewrite_header(path, mutate):
    raw = path.read_bytes()
    (n,) = struct.unpack("<Q", raw[:8])
    header = json.loads(raw[8 : 8 + n])
    mutate(header)
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    path.write_bytes(struct.pack("<Q", len(blob)) + blob + raw[8 + n :])


def test_checkpoint_corruption_is_reported(tmp_path):
    run, system = _system()
    path = tmp_path / "c.ckpt"
    save_checkpoint(path, Checkpoint(system, run))
    good = path.read_bytes()

    def tamper_offset(h):
        h["tensors"]["param/student.heads.classifier.weight"]["byte_offset"] = h["payload_bytes"] + 4

    _rewrite_header(path, tamper_offset)
    with pytest.raises(CheckpointError, match="byte_offset"):
        load_checkpoint(path)

    path.write_bytes(good)
    _rewrite_header(path, lambda h: h.update(version=99))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(path)

    path.write_bytes(good[:-4])
    with pytest.raises(CheckpointError, match="payload"):
        load_checkpoint(path)

    path.write_bytes(good[:5])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)

    path.write_bytes(good)
    _rewrite_header(path, lambda h: h["tensors"]["param/student.heads.classifier.weight"].update(shape=[4, 4]))
    with pytest.raises(CheckpointError, match="shape"):
        load_checkpoint(path)

    path.write_bytes(good)
    with pytest.raises(CheckpointError, match="classes"):
        load_checkpoint(path, expect_classes=5)
    with pytest.raises(CheckpointError, match="not found"):
        load_checkpoint(tmp_path / "nope.ckpt")


# data


def test_manifest_vocabulary_and_split(tmp_path):
    m = tmp_path / "m.csv"
    m.write_text("image_path,label\na.png,zeta\nb.png,alpha\nc.png,zeta\n")
    manifest = read_manifest(m)
    assert manifest.vocabulary == ["alpha", "zeta"] and manifest.n_classes == 2
    assert manifest.label_index().tolist() == [1, 0, 1]
    with pytest.raises(DataError, match="unknown labels"):
        read_manifest(m, ["alpha"])
    m.write_text("image_path,label,split\na.png,x,train\nb.png,y,val\n")
    tr, va = split_indices(read_manifest(m))
    assert tr.tolist() == [0] and va.tolist() == [1]
    m.write_text("image_path,label\n")
    with pytest.raises(DataError, match="empty"):
        read_manifest(m)


# command line


def _run(argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def synthetic_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("syn")
    write_synthetic(root, n=16, size=32, seed=0)
    (root / "run.ini").write_text(TINY)
    return root


def test_train_student_requires_teacher_checkpoint(synthetic_dir, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["train-student", "--manifest", str(synthetic_dir / "manifest.csv"), "--out", "x.ckpt"])
    assert exc.value.code == 2
    assert "--teacher-checkpoint" in capsys.readouterr().err


def test_handled_errors_exit_nonzero_with_json(tmp_path, capsys):
    code = cli.main(["train-student", "--manifest", str(tmp_path / "none.csv"), "--teacher-checkpoint", str(tmp_path / "t.ckpt"), "--out", str(tmp_path / "s.ckpt")])
    assert code == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "CheckpointError"


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "gazefocal", "config-schema"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["properties"]["batch_size"]["default"] == 64


def test_preprocess_gaze_matches_pipeline(tmp_path):
    rng = np.random.default_rng(0)
    pts = np.clip(np.round(rng.normal(128, 3, (100, 2))), 0, 255).astype(int)
    gaze = tmp_path / "gaze.csv"
    gaze.write_text("image_id,x,y,timestamp\n" + "".join(f"center,{x},{y},{i}\n" for i, (x, y) in enumerate(pts)))
    out = tmp_path / "regions.csv"
    assert _run(["preprocess-gaze", "--gaze", gaze, "--out", out, "--heatmaps", tmp_path / "hm"]) == 0
    region = read_regions_csv(out)["center"]
    expected = hva_pipeline(read_gaze_csv(gaze)["center"], 256, 256, HvaConfig())
    assert region == pytest.approx(tuple(expected), abs=1e-12)
    assert abs(region.cx - 0.5) < 0.02 and abs(region.cy - 0.5) < 0.02
    assert (tmp_path / "hm" / "center.png").exists()


def test_evaluate_with_perfect_predictions(tmp_path):
    manifest = tmp_path / "m.csv"
    manifest.write_text("image_path,label\na.png,cat\nb.png,dog\nc.png,dog\n")
    preds = tmp_path / "p.jsonl"
    rows = [("a.png", [0.9, 0.1]), ("b.png", [0.2, 0.8]), ("c.png", [0.4, 0.6])]
    preds.write_text("".join(json.dumps({"image_path": p, "classes": ["cat", "dog"], "probs": v}) + "\n" for p, v in rows))
    out = tmp_path / "metrics.json"
    assert _run(["evaluate", "--manifest", manifest, "--predictions", preds, "--out", out]) == 0
    report = json.loads(out.read_text())
    for key in ("accuracy", "auc", "f1_macro", "f1_micro", "precision", "recall"):
        assert report[key] == 1.0
    assert report["f1_per_class"] == [1.0, 1.0]


def _end_to_end(root: Path, work: Path) -> bytes:
    work.mkdir()
    cfg, manifest = root / "run.ini", root / "manifest.csv"
    assert _run(["preprocess-gaze", "--gaze", root / "gaze.csv", "--out", work / "regions.csv", "--config", cfg]) == 0
    assert _run(["train-teacher", "--config", cfg, "--manifest", manifest, "--out", work / "t.ckpt", "--log", work / "t.jsonl"]) == 0
    assert _run([
        "train-student", "--config", cfg, "--manifest", manifest, "--teacher-checkpoint", work / "t.ckpt",
        "--out", work / "s.ckpt", "--log", work / "s.jsonl",
    ]) == 0
    assert _run(["predict", "--checkpoint", work / "s.ckpt", "--manifest", manifest, "--out", work / "p.jsonl"]) == 0
    assert _run(["evaluate", "--checkpoint", work / "s.ckpt", "--manifest", manifest, "--out", work / "m.json"]) == 0
    assert _run(["evaluate", "--predictions", work / "p.jsonl", "--manifest", manifest, "--out", work / "m2.json"]) == 0
    assert (work / "m.json").read_text() == (work / "m2.json").read_text()
    logs = [json.loads(line) for line in (work / "s.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in logs] == [0, 1]
    assert all("train_ce" in r and "val_loss" in r for r in logs)
    return (work / "m.json").read_bytes(), (work / "s.ckpt").read_bytes()


def test_end_to_end_runs_are_identical(synthetic_dir, tmp_path):
    m1, c1 = _end_to_end(synthetic_dir, tmp_path / "run1")
    m2, c2 = _end_to_end(synthetic_dir, tmp_path / "run2")
    assert m1 == m2
    assert c1 == c2
    report = json.loads(m1)
    assert set(report) >= {"accuracy", "auc", "f1_per_class", "f1_macro", "f1_micro", "precision", "recall"}


def test_make_synthetic_command(tmp_path):
    assert _run(["make-synthetic", "--out", tmp_path / "s", "--n", "4", "--size", "32"]) == 0
    manifest = read_manifest(tmp_path / "s" / "manifest.csv")
    assert manifest.vocabulary == ["large", "small"] and manifest.has_regions
    data, _ = make_synthetic(4, 32)
    assert data.images.shape == (4, 32, 32, 1)
