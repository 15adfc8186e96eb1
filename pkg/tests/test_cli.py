import csv
import json

import numpy as np
import pytest

from lfinet.cli import decompose_image, main
from lfinet.trajdata import load_png, save_png

TINY = {"epochs": 1, "batch_size": 2, "synthetic_samples": 4, "lr": 1e-3, "image_size": [16, 16],
        "widths": [8, 16, 16], "st_dim": 16, "st_layers": 1}


def write_csv(path, rows):
    lines = ["timestamp,lon,lat,speed,heading,machine_id"] + [f"{i},{lon},{lat},1,0,m" for i, (lon, lat) in enumerate(rows)]
    path.write_text("\n".join(lines) + "\n")


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    (root / "cfg.json").write_text(json.dumps(TINY))
    assert main(["train", "--config", str(root / "cfg.json"), "--seed", "2", "--out", str(root / "run")]) == 0
    assert main(["synth", "--n", "3", "--size", "16", "--seed", "2", "--out", str(root / "data")]) == 0
    return root


def test_rasterize_valid(tmp_path):
    write_csv(tmp_path / "t.csv", [(0.25, 0.25), (0.5, 0.5)])
    assert main(["rasterize", str(tmp_path / "t.csv"), "--bounds", "0", "0", "1", "1", "--grid", "16", "16",
                 "--out", str(tmp_path / "r.png")]) == 0
    assert load_png(tmp_path / "r.png").shape == (16, 16)
    assert json.loads((tmp_path / "r.json").read_text())["clamp_count"] == 0


def test_rasterize_out_of_bounds_only(tmp_path):
    write_csv(tmp_path / "t.csv", [(3, 3), (4, 4), (5, -1)])
    assert main(["rasterize", str(tmp_path / "t.csv"), "--bounds", "0", "0", "1", "1", "--grid", "16", "16",
                 "--out", str(tmp_path / "r.png")]) == 0
    assert not load_png(tmp_path / "r.png").any()
    assert json.loads((tmp_path / "r.json").read_text())["clamp_count"] == 3


def test_rasterize_empty_csv(tmp_path, capsys):
    write_csv(tmp_path / "t.csv", [])
    assert main(["rasterize", str(tmp_path / "t.csv"), "--bounds", "0", "0", "1", "1", "--out",
                 str(tmp_path / "r.png")]) != 0
    assert "empty trajectory" in capsys.readouterr().err


def test_rasterize_bad_row_reports_line(tmp_path, capsys):
    (tmp_path / "t.csv").write_text("timestamp,lon,lat,speed,heading,machine_id\n0,0.5,0.5,1,0,m\n1,0.5\n")
    assert main(["rasterize", str(tmp_path / "t.csv"), "--bounds", "0", "0", "1", "1", "--out",
                 str(tmp_path / "r.png")]) != 0
    assert ":3:" in capsys.readouterr().err


def test_decompose_constant(tmp_path, capsys):
    save_png(tmp_path / "c.png", np.full((16, 16), 100, np.uint8))
    assert main(["decompose", str(tmp_path / "c.png"), "--out", str(tmp_path / "d")]) == 0
    out = capsys.readouterr().out
    err = float(out.strip().splitlines()[-1].split(":")[1])
    assert err < 1e-5
    for name in ("L0", "L1", "L2"):
        np.testing.assert_array_equal(load_png(tmp_path / "d" / f"{name}.png"), 128 / 255)
    assert (tmp_path / "d" / "base.png").exists()


def test_decompose_error_line_matches_library(tmp_path, capsys, rng):
    img = rng.integers(0, 256, (20, 13)).astype(np.uint8)
    save_png(tmp_path / "r.png", img)
    assert main(["decompose", str(tmp_path / "r.png"), "--out", str(tmp_path / "d")]) == 0
    out = capsys.readouterr().out
    assert "padded" in out
    _, err, pad = decompose_image(load_png(tmp_path / "r.png"))
    assert pad == (4, 3)
    assert out.strip().endswith(repr(err))
    assert sorted(p.name for p in (tmp_path / "d").iterdir()) == ["L0.png", "L1.png", "L2.png", "base.png"]


def test_train_writes_checkpoint_and_one_row(trained):
    run = trained / "run"
    assert (run / "checkpoint.lfinet").exists() and (run / "config.json").exists()
    rows = list(csv.DictReader(open(run / "metrics.csv")))
    assert len(rows) == 1 and set(rows[0]) == {"epoch", "loss", "dice", "bce", "train_iou"}
    assert json.loads((run / "config.json").read_text())["seed"] == 2


def test_infer_and_dump(trained, tmp_path):
    image = trained / "data" / "images" / sorted((trained / "data" / "images").iterdir())[0].name
    assert main(["infer", str(trained / "run" / "checkpoint.lfinet"), str(image), "--out", str(tmp_path / "i"),
                 "--dump-intermediates"]) == 0
    mask = load_png(tmp_path / "i" / "mask.png")
    assert set(np.unique(mask)) <= {0.0, 1.0}
    inter = tmp_path / "i" / "intermediates"
    assert (inter / "gate_L0.png").exists()
    rows = list(csv.DictReader(open(inter / "fgm_weights.csv")))
    assert len(rows) == 9


def test_eval_outputs(trained, tmp_path, monkeypatch):
    monkeypatch.setenv("LFINET_THREADS", "2")
    assert main(["eval", str(trained / "run" / "checkpoint.lfinet"), str(trained / "data" / "manifest.json"),
                 "--out", str(tmp_path / "e")]) == 0
    report = json.loads((tmp_path / "e" / "report.json").read_text())
    assert report["n_samples"] == 3
    assert len(list(csv.DictReader(open(tmp_path / "e" / "metrics.csv")))) == 3


def test_bad_threads_value(trained, tmp_path, monkeypatch):
    monkeypatch.setenv("LFINET_THREADS", "many")
    assert main(["eval", str(trained / "run" / "checkpoint.lfinet"), str(trained / "data" / "manifest.json"),
                 "--out", str(tmp_path / "e")]) != 0


def test_infer_rejects_foreign_file(tmp_path, capsys):
    (tmp_path / "x.lfinet").write_bytes(b"PK\x03\x04" + b"\0" * 64)
    save_png(tmp_path / "a.png", np.zeros((16, 16)))
    assert main(["infer", str(tmp_path / "x.lfinet"), str(tmp_path / "a.png"), "--out", str(tmp_path / "o")]) != 0
    assert "not an LFINETv1 checkpoint" in capsys.readouterr().err


def test_unknown_config_key(tmp_path, capsys):
    (tmp_path / "c.json").write_text(json.dumps({"learning_rate": 0.1}))
    assert main(["train", "--config", str(tmp_path / "c.json")]) != 0
    assert "learning_rate" in capsys.readouterr().err


def test_gradcheck_lms_scope_exits_zero(capsys):
    assert main(["gradcheck", "--scope", "lms"]) == 0
    assert "PASS" in capsys.readouterr().out
