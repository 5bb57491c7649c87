import csv
import io
import json
import xml.etree.ElementTree as ET
from pathlib import Path

import pytest

from satlens.cli import main, summarize
from satlens.diagnostics import detect_tails
from satlens.report import read_json, write_json

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
SVG = "{http://www.w3.org/2000/svg}"

SMALL_CNN = {
    "schema": "satlens.experiment/v1",
    "architecture": {"layers": [
        {"kind": "conv2d", "filters": 6, "kernel": 3, "padding": 1}, {"kind": "relu"},
        {"kind": "conv2d", "filters": 6, "kernel": 3, "padding": 1}, {"kind": "relu"},
        {"kind": "conv2d", "filters": 6, "kernel": 3, "padding": 1}, {"kind": "relu"},
        {"kind": "global_avg_pool"}, {"kind": "dense", "units": 3}]},
    "dataset": {"kind": "glyph-images", "classes": 3, "samples": 300, "resolution": 6, "seed": 0},
    "train": {"epochs": 3, "batch_size": 32, "seed": 0},
    "analysis": {"probe": True},
}


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def read_csv(path):
    return list(csv.DictReader(io.StringIO(Path(path).read_text())))


@pytest.fixture(scope="module")
def blobs_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("blobs")
    assert main(["train", "--config", str(CONFIGS / "blobs_mlp.json"), "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def cnn_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cnn")
    cfg = root / "cnn.json"
    cfg.write_text(json.dumps(SMALL_CNN))
    assert main(["train", "--config", str(cfg), "--out", str(root / "run")]) == 0
    return root / "run"


def test_train_writes_bundle(blobs_run):
    report = read_json(blobs_run / "report.json", "satlens.report/v1")
    assert len(report["epochs"]) == 30
    assert [e["epoch"] for e in report["epochs"]] == list(range(1, 31))
    assert report["meta"]["seed"] == 0 and len(report["meta"]["config_hash"]) == 64
    assert {"satlens", "numpy", "python"} <= set(report["meta"]["versions"])
    rows = read_csv(blobs_run / "saturation.csv")
    assert len(rows) == 30 * len(report["final"]["saturation"]["layers"])
    assert (blobs_run / "checkpoint.json").exists()
    assert not (blobs_run / "probes.json").exists()


def test_train_is_deterministic(tmp_path, blobs_run):
    assert main(["train", "--config", str(CONFIGS / "blobs_mlp.json"), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "saturation.csv").read_bytes() == (blobs_run / "saturation.csv").read_bytes()


def test_seed_override_recorded(tmp_path, blobs_run):
    assert main(["train", "--config", str(CONFIGS / "blobs_mlp.json"), "--out", str(tmp_path),
                 "--seed", "7"]) == 0
    assert read_json(tmp_path / "report.json")["meta"]["seed"] == 7


def test_missing_dataset_file(tmp_path, capsys):
    cfg = {"architecture": "arch.json", "dataset": {"kind": "idx", "images": "nope-images.idx",
                                                    "labels": "nope-labels.idx"}}
    (tmp_path / "arch.json").write_text((CONFIGS / "arch" / "mlp.json").read_text())
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    code, _, err = run(capsys, "train", "--config", tmp_path / "cfg.json", "--out", tmp_path / "o")
    assert code == 2
    assert json.loads(err)["error"] == "DatasetNotFound"


def test_bad_config_is_user_error(tmp_path, capsys):
    (tmp_path / "cfg.json").write_text('{"architecture": {"layers": []}, "dataset": {"kind": "blobs"}, '
                                       '"analysis": {"deltas": [1.5]}}')
    code, _, err = run(capsys, "train", "--config", tmp_path / "cfg.json")
    assert code == 2 and "error" in json.loads(err)


def test_report_summary(blobs_run, capsys):
    code, out, _ = run(capsys, "report", blobs_run)
    assert code == 0
    assert "mean saturation:" in out and "width advice:" in out
    assert "probe accuracy" not in out


def test_report_keep_width(tmp_path, blobs_run):
    report = read_json(blobs_run / "report.json")
    report["final"]["saturation"]["mean_saturation"] = 0.25
    write_json(tmp_path / "report.json", report)
    assert "width advice: keep width" in summarize(tmp_path)
    report["final"]["saturation"]["mean_saturation"] = 0.05
    write_json(tmp_path / "report.json", report)
    assert "width advice: shrink width by factor 0.25" in summarize(tmp_path)


def test_corrupted_bundle(tmp_path, capsys):
    (tmp_path / "report.json").write_text('{"schema": "satlens.report/v1", "final": ')
    code, _, err = run(capsys, "report", tmp_path)
    assert code == 3 and json.loads(err)["error"] == "BadBundle"
    code, _, err = run(capsys, "report", tmp_path / "absent")
    assert code == 3


def test_project_sweep_identity_delta(blobs_run, tmp_path, capsys):
    code, out, _ = run(capsys, "project-sweep", "--checkpoint", blobs_run / "checkpoint.json",
                       "--delta", "1.0", "--repeats", "2", "--out", tmp_path)
    assert code == 0
    (row,) = read_csv(tmp_path / "sweep.csv")
    assert float(row["mu_diff"]) == 0.0 and row["status"] == "ZeroVariance"
    assert out == (tmp_path / "sweep.csv").read_text()


def test_project_sweep_sum_dim_monotone(blobs_run, tmp_path, capsys):
    code, _, _ = run(capsys, "project-sweep", "--checkpoint", blobs_run / "checkpoint.json",
                     "--delta", "0.5,0.9,0.99,1.0", "--repeats", "3", "--out", tmp_path)
    assert code == 0
    rows = read_csv(tmp_path / "sweep.csv")
    assert [float(r["delta"]) for r in rows] == [0.5, 0.9, 0.99, 1.0]
    dims = [int(r["sum_dim"]) for r in rows]
    assert dims == sorted(dims)
    assert all(int(r["n"]) == 3 for r in rows)
    sweep = read_json(tmp_path / "sweep.json")
    assert sweep["mode"] == "eigenspace" and "min_delta" in sweep["verdict"]


def test_project_sweep_random_mode(blobs_run, tmp_path, capsys):
    code, _, _ = run(capsys, "project-sweep", "--checkpoint", blobs_run / "checkpoint.json",
                     "--delta", "0.9", "--repeats", "1", "--random-projection", "--out", tmp_path)
    assert code == 0
    assert (tmp_path / "sweep-random.csv").exists() and not (tmp_path / "sweep.csv").exists()
    assert read_json(tmp_path / "sweep-random.json")["mode"] == "random"


def test_bad_delta_rejected(blobs_run, capsys):
    code, _, err = run(capsys, "project-sweep", "--checkpoint", blobs_run / "checkpoint.json",
                       "--delta", "0")
    assert code == 2 and json.loads(err)["error"] == "ConfigError"


def test_tampered_checkpoint(blobs_run, tmp_path, capsys):
    ckpt = read_json(blobs_run / "checkpoint.json")
    ckpt["config"]["train"]["epochs"] = 1
    write_json(tmp_path / "checkpoint.json", ckpt)
    code, _, err = run(capsys, "probe", "--checkpoint", tmp_path / "checkpoint.json")
    assert code == 3 and json.loads(err)["error"] == "BadBundle"


def test_train_with_probes(cnn_run, capsys):
    report = read_json(cnn_run / "report.json")
    layers = report["final"]["saturation"]["layers"]
    assert report["probes"]["layers"] == layers
    root = ET.fromstring((cnn_run / "chart.svg").read_text())
    assert root.get("viewBox") == "0 0 800 400"
    bars = [e for e in root.iter(SVG + "rect") if e.get("class") == "bar"]
    assert len(bars) == len(layers)
    _, out, _ = run(capsys, "report", cnn_run)
    assert "probe accuracy:" in out


def test_probe_command(cnn_run, tmp_path, capsys):
    code, out, _ = run(capsys, "probe", "--checkpoint", cnn_run / "checkpoint.json", "--out", tmp_path)
    assert code == 0
    rows = read_csv(tmp_path / "probes.csv")
    assert len(rows) == len(out.splitlines()) == 3
    sats = [float(r["saturation"]) for r in rows]
    root = ET.fromstring((tmp_path / "chart.svg").read_text())
    shaded = [(int(e.get("data-start")), int(e.get("data-end")))
              for e in root.iter(SVG + "rect") if e.get("class") == "tail"]
    assert shaded == []  # three layers cannot hold a tail
    assert [r["in_tail"] for r in rows] == ["false"] * 3
    assert [int(r["receptive_field"]) for r in rows] == [3, 5, 7]
    markers = [e for e in root.iter(SVG + "line") if e.get("class") == "rf-marker"]
    assert [m.get("data-layer") for m in markers] == [rows[2]["layer"]]
    assert all(0 < s <= 1 for s in sats)


def test_detect_tails_command(tmp_path, capsys):
    code, out, _ = run(capsys, "detect-tails", "--values", "0.5,0.5,0.5,0.1,0.1,0.1")
    assert code == 0
    assert json.loads(out)["tails"] == [{"start": 3, "end": 5, "tail_mean": pytest.approx(0.1),
                                         "rest_mean": pytest.approx(0.5)}]
    values = [0.9, 0.8, 0.85, 0.1, 0.1, 0.1, 0.1]
    write_json(tmp_path / "report.json", {"saturations": values})
    _, out, _ = run(capsys, "detect-tails", tmp_path)
    assert [(t["start"], t["end"]) for t in json.loads(out)["tails"]] == \
        [(t.start, t.end) for t in detect_tails(values)]
    code, _, err = run(capsys, "detect-tails", "--values", "0.1,0.2")
    assert code == 2 and json.loads(err)["error"] == "TooFewLayers"


def test_thread_env_validated(monkeypatch, capsys):
    monkeypatch.setenv("SATLENS_THREADS", "zero")
    code, _, err = run(capsys, "detect-tails", "--values", "0.5,0.5,0.5,0.1")
    assert code == 2 and json.loads(err)["error"] == "ConfigError"
