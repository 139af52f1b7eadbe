import csv
import datetime as dt
import hashlib
import json
import math
import shutil

import numpy as np
import pytest

from locustbreed.cli import main
from locustbreed.geodata import read_stack
from locustbreed.models import Checkpoint, ModelConfig, build_model
from synth import random_presences, small_project, write_observations

PIPELINE = ("curate", "featurize", "train", "evaluate", "predict-map")


def _run(cfg, *argv):
    return main([argv[0], "--config", str(cfg), *argv[1:]])


def _digest(root):
    return {p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def project(tmp_path_factory):
    cfg = small_project(tmp_path_factory.mktemp("proj"))
    for cmd in PIPELINE:
        assert _run(cfg, cmd) == 0
    return cfg


def test_curate_balances_presences(tmp_path):
    cfg = small_project(tmp_path, n_presences=10)
    assert _run(cfg, "curate") == 0
    with open(tmp_path / "out" / "curated.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 20
    assert sum(r["label"] == "1" for r in rows) == 10
    assert {r["provenance"] for r in rows if r["label"] == "0"} == {"pseudo_absence"}


def test_empty_observations_exit_2(tmp_path, capsys):
    cfg = small_project(tmp_path)
    (tmp_path / "observations.csv").write_bytes(b"")
    assert _run(cfg, "curate") == 2
    assert "no presence records" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_missing_input_writes_nothing(tmp_path, capsys):
    cfg = small_project(tmp_path)
    assert _run(cfg, "curate") == 0
    before = _digest(tmp_path / "out")
    (tmp_path / "static.lgrs").unlink()
    assert _run(cfg, "featurize") == 2
    assert "static" in capsys.readouterr().err
    assert _digest(tmp_path / "out") == before


def test_rerun_is_byte_identical(project):
    out = project.parent / "out"
    first = _digest(out)
    shutil.rmtree(out)
    for cmd in PIPELINE:
        assert _run(project, cmd) == 0
    assert _digest(out) == first


def test_seed_flag_changes_outputs(tmp_path):
    cfg = small_project(tmp_path)
    assert main(["--config", str(cfg), "--seed", "1", "curate", "--output-dir", str(tmp_path / "a")]) == 0
    assert main(["curate", "--config", str(cfg), "--seed", "2", "--output-dir", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "curated.csv").read_bytes()
    assert a != (tmp_path / "b" / "curated.csv").read_bytes()
    snap = json.loads((tmp_path / "a" / "run_curate.json").read_text())
    assert snap["config"]["curation"]["rng_seed"] == 1
    assert snap["outputs"]["curated.csv"] == hashlib.sha1(b"blob %d\0" % len(a) + a).hexdigest()


def test_edge_records_are_reported(tmp_path, capsys):
    cfg = small_project(tmp_path)
    rows = random_presences(24, (30.5, 17.5, 32.5, 19.5), dt.date(2021, 1, 1), dt.date(2021, 12, 31))
    rows.append(("edge-1", 30.05, 18.55, dt.date(2021, 11, 2), "laying", ""))
    write_observations(tmp_path / "observations.csv", rows)
    assert _run(cfg, "curate") == 0
    assert _run(cfg, "featurize") == 0
    assert "edge-1" in capsys.readouterr().out
    with open(tmp_path / "out" / "features" / "rs_rejections.csv", newline="") as fh:
        rej = list(csv.DictReader(fh))
    assert [r["id"] for r in rej] == ["edge-1"] and rej[0]["split"] == "test"


def test_feature_manifest_shapes(project):
    man = json.loads((project.parent / "out" / "features" / "rs_manifest.json").read_text())
    assert man["shapes"] == {"temporal": [30, 7, 7, 3], "static": [7, 7, 17]}
    assert man["flat_length"] == 5243


def test_metrics_have_every_column(project):
    m = json.loads((project.parent / "out" / "metrics_test.json").read_text())
    assert set(m["row"]) == {"accuracy", "precision", "recall", "f1", "roc_auc"}
    assert set(m["binary"]) >= set(m["row"]) and set(m["macro"]) >= set(m["row"])


def test_mismatched_checkpoint_exit_3(project, tmp_path, capsys):
    cfg = ModelConfig("logreg", {"temporal": (30, 7, 7, 2), "static": (7, 7, 17)})
    bad = tmp_path / "bad.lbck"
    model = build_model(cfg)
    Checkpoint(cfg, model.state_dict()).save(bad)
    assert _run(project, "evaluate", "--checkpoint", str(bad)) == 3
    assert "weight" in capsys.readouterr().err
    other = ModelConfig("conv3d", {"temporal": (30, 7, 7, 3), "static": (7, 7, 17)})
    Checkpoint(other, build_model(other).state_dict()).save(bad)
    assert _run(project, "evaluate", "--checkpoint", str(bad)) == 3
    bad.write_bytes(b"junk")
    assert _run(project, "predict-map", "--checkpoint", str(bad)) == 3


def test_predict_map_extent_and_constant_model(project, tmp_path):
    cfg = ModelConfig("logreg", {"temporal": (30, 7, 7, 3), "static": (7, 7, 17)})
    model = build_model(cfg)
    model.bias.data[:] = 0.7
    ck = tmp_path / "const.lbck"
    Checkpoint(cfg, model.state_dict()).save(ck)
    region = (31.0, 18.0, 31.6, 18.3)
    out = tmp_path / "maps"
    shutil.copytree(project.parent / "out", out)
    argv = ["--checkpoint", str(ck), "--region", *map(str, region), "--date", "2021-11-15", "--png",
            "--output-dir", str(out)]
    assert _run(project, "predict-map", *argv) == 0
    stack = read_stack(out / "prediction_map.lgrs")
    assert stack.transform.bounds == pytest.approx(region)
    prob = stack.values[0, 0]
    assert prob.shape == (3, 6)
    np.testing.assert_allclose(prob, 1 / (1 + math.exp(-0.7)), rtol=1e-6)
    assert (stack.values[1, 0] == 1).all()
    assert (out / "prediction_map.png").read_bytes()[:4] == b"\x89PNG"


def test_predict_map_out_of_bounds(project, tmp_path, capsys):
    out = tmp_path / "oob"
    shutil.copytree(project.parent / "out", out)
    (out / "prediction_map.lgrs").unlink()
    assert _run(project, "predict-map", "--region", "29", "18", "31", "19", "--output-dir", str(out)) == 2
    assert "outside" in capsys.readouterr().err
    assert not (out / "prediction_map.lgrs").exists()


def test_train_resume_flag(project, tmp_path):
    out = tmp_path / "resume"
    shutil.copytree(project.parent / "out", out)
    assert _run(project, "train", "--resume", "--output-dir", str(out)) == 0
    assert (out / "model.lbck").read_bytes() == (project.parent / "out" / "model.lbck").read_bytes()


def test_unknown_config_key_exit_2(tmp_path, capsys):
    cfg = small_project(tmp_path)
    cfg.write_text(cfg.read_text() + "\n[extra]\nfoo = 1\n")
    assert _run(cfg, "curate") == 2
    assert "extra" in capsys.readouterr().err


def test_chip_pipeline(tmp_path):
    cfg = small_project(tmp_path, architecture="prithvi_lb", chips=True)
    for cmd in ("curate", "chip", "train", "evaluate", "predict-map"):
        assert _run(cfg, cmd) == 0, cmd
    out = tmp_path / "out"
    man = json.loads((out / "features" / "chip_manifest.json").read_text())
    assert man["shapes"]["chip"] == [3, 6, 16, 16]
    stack = read_stack(out / "prediction_map.lgrs")
    assert stack.transform.bounds == pytest.approx((30.75, 18.25, 31.75, 19.25))
    prob = stack.values[0, 0]
    assert prob.shape == (32, 32) and ((prob >= 0) & (prob <= 1)).all()
