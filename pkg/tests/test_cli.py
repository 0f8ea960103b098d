import json
import subprocess
import sys

import numpy as np
import pytest

from sarvessel.cli import EXIT_CONFIG, EXIT_IO, load_run_config, main, read_detections
from sarvessel.cnn import save_weights
from sarvessel.errors import FormatError
from sarvessel.evaluation import REPORT_KEYS
from sarvessel.scene_io import load_scene


def run_cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def read_pgm(path):
    raw = path.read_bytes()
    magic, dims, maxval, rest = raw.split(b"\n", 3)
    cols, rows = map(int, dims.split())
    return magic, int(maxval), np.frombuffer(rest, dtype=np.uint8).reshape(rows, cols)


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("scenes")
    for i in range(3):
        assert main(["synth", "--rows", "160", "--cols", "160", "--vessels", "8",
                     "--seed", str(40 + i), "--out", str(d / f"t{i}")]) == 0
    assert main(["synth", "--rows", "256", "--cols", "256", "--vessels", "5", "--tcr-min", "20",
                 "--tcr-max", "20", "--seed", "99", "--out", str(d / "bright")]) == 0
    assert main(["synth", "--rows", "128", "--cols", "128", "--vessels", "0",
                 "--seed", "5", "--out", str(d / "empty")]) == 0
    return d


@pytest.fixture(scope="module")
def weights(tmp_path_factory, trained):
    path = tmp_path_factory.mktemp("w") / "net.sdw"
    save_weights(trained["net"], path)
    return path


# --- synth ------------------------------------------------------------------------


def test_synth_writes_scene(tmp_path, capsys):
    stem = tmp_path / "s1"
    code, out, _ = run_cli(capsys, "synth", "--rows", 256, "--cols", 256, "--vessels", 5, "--seed", 7, "--out", stem)
    assert code == 0
    for suffix in (".json", ".f32", ".truth.json"):
        assert (tmp_path / f"s1{suffix}").exists()
    assert len(json.loads((tmp_path / "s1.truth.json").read_text())) == 5
    stats = json.loads(out)
    assert stats["vessels"] == 5 and set(stats["bands"]) == {"VV", "VH"}
    scene, truth = load_scene(stem)
    assert scene.shape == (256, 256) and len(truth) == 5


def test_synth_is_reproducible(tmp_path, capsys):
    for name in ("a", "b"):
        run_cli(capsys, "synth", "--rows", 64, "--cols", 64, "--vessels", 3, "--seed", 7, "--out", tmp_path / name,
                "--scene-id", "same")
    assert (tmp_path / "a.f32").read_bytes() == (tmp_path / "b.f32").read_bytes()


def test_synth_placement_failure(tmp_path, capsys):
    code, _, err = run_cli(capsys, "synth", "--rows", 64, "--cols", 64, "--vessels", 100000, "--out", tmp_path / "x")
    assert code == EXIT_CONFIG
    assert err.startswith("error:")
    assert not (tmp_path / "x.f32").exists()


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "sarvessel", "synth", "--rows", "32", "--cols", "32", "--vessels", "1",
         "--out", str(tmp_path / "m")],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["rows"] == 32


# --- config handling ------------------------------------------------------------


def test_config_sections_and_unknown_keys(tmp_path, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"seed": 3, "synth": {"rows": 48, "cols": 40, "n_vessels": 2}}))
    run = load_run_config(cfg)
    assert run.seed == 3 and run.section("synth").rows == 48
    code, out, _ = run_cli(capsys, "synth", "--config", cfg, "--out", tmp_path / "c")
    assert code == 0 and json.loads(out)["cols"] == 40

    cfg.write_text(json.dumps({"synth": {"rowz": 48}}))
    code, _, err = run_cli(capsys, "synth", "--config", cfg, "--out", tmp_path / "c")
    assert code == EXIT_CONFIG and "rowz" in err
    cfg.write_text(json.dumps({"sinth": {}}))
    assert run_cli(capsys, "synth", "--config", cfg, "--out", tmp_path / "c")[0] == EXIT_CONFIG
    cfg.write_text("{not json")
    assert run_cli(capsys, "synth", "--config", cfg, "--out", tmp_path / "c")[0] == EXIT_CONFIG


def test_missing_files_exit_io(tmp_path, capsys):
    assert run_cli(capsys, "synth", "--config", tmp_path / "nope.json", "--out", tmp_path / "c")[0] == EXIT_IO
    assert run_cli(capsys, "denoise", "--scene", tmp_path / "nope", "--out", tmp_path / "d")[0] == EXIT_IO


def test_bad_seed(tmp_path, capsys):
    assert run_cli(capsys, "synth", "--seed", -1, "--out", tmp_path / "c")[0] == EXIT_CONFIG


# --- denoise and cfar --------------------------------------------------------------


def test_denoise_and_cfar(scene_dir, tmp_path, capsys):
    code, out, _ = run_cli(capsys, "denoise", "--scene", scene_dir / "t0", "--out", tmp_path / "d")
    assert code == 0
    assert json.loads(out)["config"]["family"] == "db4"
    cleaned, truth = load_scene(tmp_path / "d")
    assert cleaned.shape == (160, 160) and len(truth) == 8

    code, out, _ = run_cli(capsys, "cfar", "--scene", scene_dir / "bright", "--pfa", 1e-3,
                           "--out", tmp_path / "c.json", "--mask", tmp_path / "m.pgm")
    assert code == 0
    summary = json.loads(out)
    dets, _, _ = read_detections(tmp_path / "c.json")
    assert len(dets) == summary["clusters"] > 0
    magic, _, mask = read_pgm(tmp_path / "m.pgm")
    assert magic == b"P5" and mask.shape == (256, 256)
    assert int((mask == 255).sum()) == summary["flagged_cells"]


# --- train ------------------------------------------------------------------------


def test_train_is_reproducible(scene_dir, tmp_path, capsys):
    stems = [scene_dir / f"t{i}" for i in range(3)]
    for name in ("a", "b"):
        code, out, _ = run_cli(capsys, "train", "--scenes", *stems, "--epochs", 3, "--n-chips", 40,
                               "--seed", 11, "--out", tmp_path / f"{name}.sdw")
        assert code == 0
    assert (tmp_path / "a.sdw").read_bytes() == (tmp_path / "b.sdw").read_bytes()
    hist = json.loads((tmp_path / "a.sdw.history.json").read_text())
    assert len(hist["train_loss"]) == 3 and len(hist["val_accuracy"]) == 3
    assert hist["training_time_ms"] > 0
    assert (hist["train_chips"], hist["val_chips"]) == (30, 10)


def test_train_init_weights_mismatch(scene_dir, weights, tmp_path, capsys):
    code, _, err = run_cli(capsys, "train", "--scenes", scene_dir / "t0", scene_dir / "t1", "--chip-size", 16,
                           "--epochs", 1, "--init-weights", weights, "--out", tmp_path / "w.sdw")
    assert code == EXIT_CONFIG
    assert "layer" in err
    assert not (tmp_path / "w.sdw").exists()


def test_train_needs_scenes(tmp_path, capsys):
    assert run_cli(capsys, "train", "--out", tmp_path / "w.sdw")[0] == EXIT_CONFIG


# --- detect ----------------------------------------------------------------------


def test_detect_vessel_free_scene(scene_dir, weights, tmp_path, capsys):
    out = tmp_path / "d.json"
    code, _, _ = run_cli(capsys, "detect", "--scene", scene_dir / "empty", "--weights", weights, "--out", out)
    assert code == 0
    payload = json.loads(out.read_text())
    assert payload["detections"] == []
    assert payload["detection_time_ms"] >= 0


def test_detect_overlay_outlines_vessels(scene_dir, weights, tmp_path, capsys):
    overlay = tmp_path / "o.pgm"
    code, _, _ = run_cli(capsys, "detect", "--scene", scene_dir / "bright", "--weights", weights,
                         "--out", tmp_path / "d.json", "--overlay", overlay)
    assert code == 0
    magic, maxval, image = read_pgm(overlay)
    assert magic == b"P5" and maxval == 255 and image.shape == (256, 256)
    dets, _, _ = read_detections(tmp_path / "d.json")
    for d in dets:
        b = d.box
        assert np.all(image[b.row, b.col:b.right] == 255) and np.all(image[b.bottom - 1, b.col:b.right] == 255)
        assert np.all(image[b.row:b.bottom, b.col] == 255) and np.all(image[b.row:b.bottom, b.right - 1] == 255)
    _, truth = load_scene(scene_dir / "bright")
    outlined = 0
    for box in truth.vessel_boxes:
        r0, c0 = max(box.row - 3, 0), max(box.col - 3, 0)
        region = image[r0:box.bottom + 3, c0:box.right + 3]
        # a burned outline, not just one bright speckle pixel
        outlined += int((region == 255).sum()) >= box.height + box.width
    assert outlined >= 4


def test_detect_missing_weights(scene_dir, tmp_path, capsys):
    code, _, _ = run_cli(capsys, "detect", "--scene", scene_dir / "empty", "--weights", tmp_path / "none.sdw")
    assert code == EXIT_IO


# --- eval -------------------------------------------------------------------------


def write_dets(path, boxes, shift=0):
    items = [dict(b.to_dict(), col=b.col + shift, score=0.9, source="cfar") for b in boxes]
    path.write_text(json.dumps({"detections": items, "detection_time_ms": 1.5, "n_proposals": len(items)}))


def test_eval_box_perfect(scene_dir, tmp_path, capsys):
    _, truth = load_scene(scene_dir / "bright")
    write_dets(tmp_path / "d.json", truth.vessel_boxes)
    code, out, _ = run_cli(capsys, "eval", "--mode", "box", "--detections", tmp_path / "d.json",
                           "--truth", scene_dir / "bright", "--out", tmp_path / "r.json")
    assert code == 0
    report = json.loads((tmp_path / "r.json").read_text())
    assert report == json.loads(out)
    assert report["precision"] == report["recall"] == 1.0
    assert report["mode"] == "box" and report["detection_time_ms"] == 1.5


def test_eval_box_iou_threshold(scene_dir, tmp_path, capsys):
    _, truth = load_scene(scene_dir / "bright")
    write_dets(tmp_path / "d.json", truth.vessel_boxes, shift=1)
    recalls = {}
    for thr in (0.5, 0.99):
        _, out, _ = run_cli(capsys, "eval", "--mode", "box", "--detections", tmp_path / "d.json",
                            "--truth", scene_dir / "bright.truth.json", "--iou-min", thr)
        recalls[thr] = json.loads(out)["recall"]
    assert recalls[0.99] < recalls[0.5]


def test_eval_mode_mismatch(scene_dir, tmp_path, capsys):
    assert run_cli(capsys, "eval", "--mode", "box", "--scenes", scene_dir / "t0")[0] == EXIT_CONFIG
    assert run_cli(capsys, "eval", "--mode", "chip", "--truth", scene_dir / "t0")[0] == EXIT_CONFIG


def test_eval_chip_report_keys(scene_dir, weights, tmp_path, capsys):
    hist = tmp_path / "h.json"
    hist.write_text(json.dumps({"training_time_ms": 1234.0}))
    stems = [scene_dir / f"t{i}" for i in range(3)]
    code, out, _ = run_cli(capsys, "eval", "--scenes", *stems, "--weights", weights, "--n-chips", 40,
                           "--history", hist)
    assert code == 0
    report = json.loads(out)
    assert set(report) == set(REPORT_KEYS) | {"counts", "mode"}
    assert report["mode"] == "chip" and report["training_time_ms"] == 1234.0
    assert sum(report["counts"].values()) == 10


def test_read_detections_formats(tmp_path):
    bare = tmp_path / "bare.json"
    bare.write_text(json.dumps([{"row": 1, "col": 2, "height": 3, "width": 4, "score": 0.5}]))
    dets, ms, n = read_detections(bare)
    assert len(dets) == 1 and ms == 0.0 and n is None
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"detections": 3}))
    with pytest.raises(FormatError):
        read_detections(bad)


# --- bench ------------------------------------------------------------------------


def test_small_bench(tmp_path, capsys):
    cfg = tmp_path / "bench.json"
    cfg.write_text(json.dumps({"bench": {"scenes": {"rows": 128, "cols": 128, "vessels_per_scene": 10},
                                         "heldout": {"rows": 128, "cols": 128}}}))
    code, out, _ = run_cli(capsys, "bench", "--config", cfg, "--scenes", 2, "--heldout", 1, "--n-chips", 20,
                           "--epochs", 2, "--out", tmp_path / "r.json", "--weights-out", tmp_path / "w.sdw")
    assert code == 0
    report = json.loads((tmp_path / "r.json").read_text())
    assert report["dataset"]["train"] == 15 and report["dataset"]["val"] == 5
    assert report["chip"]["mode"] == "chip" and report["box"]["mode"] == "box"
    assert len(report["history"]["train_loss"]) == 2
    assert (tmp_path / "w.sdw").exists()
    assert json.loads(out)["seed"] == report["seed"]
