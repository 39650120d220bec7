import os
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from svhdr import io
from svhdr.cli import main, preview
from svhdr.metrics import read_curve_csv
from svhdr.network.checkpoint import load_checkpoint

FAST = ["--set", "synth.sources=2", "--set", "synth.source_size=64", "--set", "synth.crop=32",
        "--set", "synth.augment=false"]


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for k in list(os.environ):
        if k.startswith("SVHDR_") and k != "SVHDR_DISABLE_NUMBA":
            monkeypatch.delenv(k)


def test_usage_errors(tmp_path, capsys):
    assert main([]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["eval", "--out", str(tmp_path), "--set", "nokey=1"]) == 1
    assert main(["eval", "--out", str(tmp_path), "--config", str(tmp_path / "missing.cfg")]) == 1
    assert main(["eval", "--out", str(tmp_path), "--method", "network"]) == 1
    assert "checkpoint" in capsys.readouterr().err


def test_data_errors(tmp_path):
    assert main(["eval", "--out", str(tmp_path), "--method", "network", "--checkpoint", str(tmp_path / "x")]) == 2
    assert main(["eval", "--out", str(tmp_path), "--dataset", str(tmp_path / "none.json")]) == 2
    a, b = tmp_path / "a.png", tmp_path / "b.png"
    io.write_png(a, np.zeros((4, 4, 3)))
    io.write_png(b, np.zeros((5, 4, 3)))
    assert main(["fuse", str(a), str(a), str(b), "--out", str(tmp_path)]) == 2
    assert main(["fuse", str(a), str(a), "--out", str(tmp_path)]) == 1


def test_preview_three_pixels():
    px = preview(np.array([[[0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [-1.0, np.float64(1e6), 0.5]]]))
    assert px.dtype == np.uint8
    assert px[0, 0].tolist() == [0, 0, 0] and px[0, 1].tolist() == [255, 255, 255]
    assert px[0, 2, 0] == 0 and px[0, 2, 1] == 255 and 0 < px[0, 2, 2] < 255


def test_synthesize_then_eval_and_fuse(tmp_path):
    out = tmp_path / "syn"
    assert main(["synthesize", "--out", str(out), "--seed", "4"] + FAST) == 0
    manifest = out / "data" / "manifest.json"
    ev = tmp_path / "ev"
    assert main(["eval", "--out", str(ev), "--dataset", str(manifest), "--set", "eval.curve_points=3"]) == 0
    rows = read_curve_csv((ev / "metrics.csv").read_text())
    assert [r["lux"] for r in rows] == [0.4, 0.2, 0.1, 0.05]
    assert len(read_curve_csv((ev / "curve.csv").read_text())) == 3
    root = ET.parse(ev / "curve.svg").getroot()
    assert root.tag.endswith("svg")
    assert (ev / "resolved-config.txt").read_text().count("seed = 0") == 1

    sample = sorted((out / "data").glob("*_v0"))[0]
    fz = tmp_path / "fz"
    ldr = [str(sample / f"ldr_{i}.png") for i in range(3)]
    assert main(["fuse", *ldr, "--out", str(fz)]) == 0
    hdr = io.read_pfm(fz / "fused.pfm")
    assert hdr.shape == (32, 32, 3) and np.isfinite(hdr).all()
    assert io.read_png(fz / "preview.png").dtype == np.uint8


def test_eval_is_reproducible(tmp_path):
    for name in ("a", "b"):
        assert main(["eval", "--out", str(tmp_path / name), "--seed", "3", "--set", "eval.curve_points=2",
                     "--deterministic"]) == 0
    for f in ("metrics.csv", "curve.csv", "curve.svg"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_env_override_reaches_run(tmp_path, monkeypatch):
    monkeypatch.setenv("SVHDR_LUX_LEVELS", "0.3")
    assert main(["eval", "--out", str(tmp_path), "--set", "eval.curve_points=0"]) == 0
    assert [r["lux"] for r in read_curve_csv((tmp_path / "metrics.csv").read_text())] == [0.3]


TRAIN = ["--set", "train.steps=4", "--set", "train.log_every=1", "--set", "train.checkpoint_every=2",
         "--set", "train.stop_mse=0"]


def test_train_resume_matches_straight_run(tmp_path):
    straight = tmp_path / "s"
    assert main(["train", "--out", str(straight), "--seed", "2"] + TRAIN) == 0
    P4, ncfg, _ = load_checkpoint(straight / "model.ckpt")
    assert P4.step == 4
    lines = (straight / "loss.csv").read_text().splitlines()
    assert lines[0] == "step,loss,tonemapped_mse,lr" and len(lines) == 5

    half = tmp_path / "h"
    assert main(["train", "--out", str(half), "--seed", "2", "--set", "train.steps=4",
                 "--set", "train.checkpoint_every=2", "--set", "train.log_every=1"]) == 0
    resumed = tmp_path / "r"
    assert main(["train", "--out", str(resumed), "--seed", "2", "--set",
                 f"train.resume={half / 'checkpoints' / 'step_000002.ckpt'}"] + TRAIN) == 0
    Pr, _, _ = load_checkpoint(resumed / "model.ckpt")
    assert Pr.step == 4
    for name in P4.names():
        np.testing.assert_array_equal(Pr[name].data, P4[name].data)

    net = tmp_path / "net"
    sample = tmp_path / "img.png"
    io.write_png(sample, np.full((8, 8, 3), 0.2))
    assert main(["fuse", str(sample), str(sample), str(sample), "--method", "network",
                 "--checkpoint", str(straight / "model.ckpt"), "--out", str(net)]) == 0
    assert io.read_pfm(net / "fused.pfm").shape == (8, 8, 3)


def test_grad_check_verb_fails_on_impossible_tolerance(tmp_path):
    assert main(["grad-check", "--out", str(tmp_path), "--set", "gradcheck.size=8", "--set", "gradcheck.probes=1",
                 "--set", "gradcheck.tolerance=1e-30"]) == 3
