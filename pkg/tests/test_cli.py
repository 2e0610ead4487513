import json
import subprocess
import sys

import pytest

from sortforge.cli import main
from sortforge.fixtures import write_capture_set, write_config


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    write_capture_set(root, 3, seed=4)
    write_config(
        root,
        evaluation={"auto_dir": "out/extract", "manual_dir": "manual"},
        export={"dataset": "out/adapt"},
        propagation={"boxes": [{"box": [580, 100, 620, 140], "label": "glass_bottle"}],
                     "v_c": 0.05, "fps": 10, "px_per_m": 1000, "n_frames": 30,
                     "frame_width": 640, "frame_height": 480},
        simulation={"generate": {"n": 20, "spacing": 6.0}, "policy": "prose"},
    )
    return root


def run(*argv):
    return main([str(a) for a in argv])


def test_extract_then_eval_then_export(workspace):
    cfg = workspace / "config.json"
    assert run("extract", "--config", cfg, "--out", workspace / "out/extract") == 0
    assert run("eval-annotations", "--config", cfg, "--out", workspace / "out/eval") == 0
    rep = json.loads((workspace / "out/eval/annotations.json").read_text())
    assert rep["schema_version"] == 1 and set(rep["categories"]) == {"aluminum_can", "glass_bottle",
                                                                      "plastic_bottle"}
    assert run("adapt", "--config", cfg, "--out", workspace / "out/adapt", "--mode", "BS+HM") == 0
    index = json.loads((workspace / "out/adapt/index.json").read_text())
    assert index["mode"] == "BS+HM" and index["schema_version"] == 1
    assert run("export", "--config", cfg, "--out", workspace / "out/export") == 0
    report = json.loads((workspace / "out/export/export_report.json").read_text())
    assert report == {"schema_version": 1, "samples": 3, "failures": 0, "problems": []}
    assert (workspace / "out/export" / index["samples"][0]["mask"]).is_file()


def test_propagate_and_simulate(workspace, capsys):
    cfg = workspace / "config.json"
    assert run("propagate", "--config", cfg, "--out", workspace / "out/prop") == 0
    doc = json.loads((workspace / "out/prop/propagation.json").read_text())
    assert doc["schema_version"] == 1
    assert [len(f["boxes"]) for f in doc["frames"][:6]] == [1, 1, 1, 1, 0, 0]
    assert run("simulate", "--config", cfg, "--out", workspace / "out/sim", "--policy", "prose") == 0
    sim = json.loads((workspace / "out/sim/simulation.json").read_text())
    assert sim["schema_version"] == 1 and sim["policy"] == "prose" and sim["spawned"] == 20


def test_similarity_and_timing(workspace, monkeypatch):
    cfg = workspace / "config.json"
    monkeypatch.setenv("SORTFORGE_JOBS", "2")
    assert run("similarity", "--config", cfg, "--out", workspace / "out/sim2") == 0
    rep = json.loads((workspace / "out/sim2/similarity.json").read_text())
    assert rep["modes"] == ["Original", "BS", "BS+HM", "BS+HM+EQ"]
    ev = workspace / "events.jsonl"
    assert run("adapt", "--config", cfg, "--out", workspace / "out/adapt2", "--events", ev) == 0
    assert run("timing", "--events", ev, "--out", workspace / "out/timing") == 0
    timing = json.loads((workspace / "out/timing/collection_time.json").read_text())
    assert timing["images"] == 3 and "extract" in timing["phases"]


def test_usage_and_config_errors(workspace, tmp_path, monkeypatch, capsys):
    assert run("adapt", "--out", tmp_path) == 1
    assert run("adapt", "--config", workspace / "config.json", "--out", tmp_path, "--mode", "EQ") == 1
    assert run("adapt", "--config", tmp_path / "missing.json", "--out", tmp_path) == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run("extract", "--config", bad, "--out", tmp_path) == 1
    no_manifest = tmp_path / "c.json"
    no_manifest.write_text(json.dumps({"manifest": "nowhere.json"}))
    assert run("extract", "--config", no_manifest, "--out", tmp_path) == 1
    monkeypatch.setenv("SORTFORGE_JOBS", "zero")
    assert run("extract", "--config", workspace / "config.json", "--out", tmp_path) == 1


def test_per_capture_failure_exit_code(tmp_path):
    path = write_capture_set(tmp_path, 2, seed=6)
    doc = json.loads(path.read_text())
    doc["captures"][0]["object_pose"]["translation"][0] += 0.12
    path.write_text(json.dumps(doc))
    cfg = write_config(tmp_path)
    assert run("adapt", "--config", cfg, "--out", tmp_path / "out") == 2
    index = json.loads((tmp_path / "out/index.json").read_text())
    assert len(index["samples"]) == 1 and index["failures"][0]["reason"] == "no object found"


def test_io_error_exit_code(workspace, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert run("simulate", "--config", workspace / "config.json", "--out", blocker / "sub") == 3


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "sortforge", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and "sortforge" in out.stdout
