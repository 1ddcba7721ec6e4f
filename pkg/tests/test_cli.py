import json
import shutil

import numpy as np
import pytest

from vicnet.cli import flops_table, main

DATAGEN = ["--modules", "3", "--soh-grid", "0.8,0.9,1.0", "--protocols", "FastB", "--n-truncate", "2"]
TRAIN = ["--epochs", "2", "--batch-size", "8"]


def outputs(d):
    return json.loads((d / "manifest.json").read_text())["outputs"]


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["datagen", "--out", str(root / "data"), *DATAGEN]) == 0
    assert main(["train", "--data", str(root / "data"), "--out", str(root / "unet"), *TRAIN]) == 0
    return root


def test_flops_ratios(capsys):
    rows = {r["arch"]: r for r in flops_table()}
    for small, big in (("mobile-unet", "unet"), ("mobile-net", "conv-net")):
        assert rows[small]["total"] / rows[big]["total"] <= 0.4
        assert rows[small]["flops"] / rows[big]["flops"] <= 0.4
    assert main(["flops"]) == 0
    assert "mobile-unet" in capsys.readouterr().out


def test_datagen_manifest(work):
    m = json.loads((work / "data" / "manifest.json").read_text())
    assert m["command"] == "datagen" and m["config"]["seed"] == 0
    assert m["n_samples"] == 18 and set(m["split"]) == {"train", "val", "test"}
    assert "labels.jsonl" in m["outputs"]


def test_train_outputs(work):
    d = work / "unet"
    assert {"model.ckpt", "regressor.json", "history.json"} <= set(outputs(d))
    assert len(json.loads((d / "history.json").read_text())["val_loss"]) == 2


def test_rerun_from_manifest_is_identical(work):
    for name in ("data", "unet"):
        cmd = json.loads((work / name / "manifest.json").read_text())["command"]
        again = work / f"{name}_again"
        assert main([cmd, "--config", str(work / name / "manifest.json"), "--out", str(again)]) == 0
        assert outputs(again) == outputs(work / name)


def test_construct_and_zero_error_on_truth(work):
    out = work / "construct"
    assert main(["construct", "--model", str(work / "unet"), "--data", str(work / "data"), "--out", str(out)]) == 0
    s = json.loads((out / "summary.json").read_text())
    assert s["n"] == 6 and np.isfinite(s["mean_error"])
    # predictions that copy the reference curves score zero
    fake = work / "fake"
    (fake / "curves").mkdir(parents=True)
    labels = [json.loads(l) for l in (work / "data" / "labels.jsonl").read_text().splitlines()]
    for rec in labels:
        shutil.copy(work / "data" / "truth" / f"{rec['run']}.csv", fake / "curves" / f"{rec['id']}.csv")
    zero = work / "zero"
    assert main(["construct", "--predictions", str(fake), "--data", str(work / "data"), "--out", str(zero)]) == 0
    assert json.loads((zero / "summary.json").read_text())["mean_error"] == 0.0


def test_construct_profile_and_estimate(work):
    prof = sorted((work / "data" / "profiles").glob("*.csv"))[0]
    out = work / "one"
    assert main(["construct", "--model", str(work / "unet"), "--profile", str(prof), "--out", str(out)]) == 0
    assert np.loadtxt(out / "curve.csv", delimiter=",", skiprows=1).shape == (128, 3)
    est = work / "est"
    assert main(["estimate", "--model", str(work / "unet"), "--profile", str(prof), "--out", str(est)]) == 0
    soh = json.loads((est / "soh.json").read_text())["estimates"][0]["soh"]
    assert 0.0 <= soh <= 1.0


def test_soh_head_eval_and_finetune(work):
    head = work / "head"
    assert main(["train", "--data", str(work / "data"), "--out", str(head), "--preset", "conv-net",
                 "--source", str(work / "unet"), *TRAIN]) == 0
    ev = work / "eval"
    assert main(["eval", "--model", str(head), "--data", str(work / "data"), "--out", str(ev),
                 "--route", "direct"]) == 0
    rep = json.loads((ev / "report.json").read_text())
    assert rep["n"] == 6 and rep["rmse"] >= 0
    ev2 = work / "eval_features"
    assert main(["eval", "--model", str(work / "unet"), "--data", str(work / "data"), "--out", str(ev2)]) == 0
    ft = work / "ft"
    assert main(["finetune", "--model", str(work / "unet"), "--data", str(work / "data"), "--out", str(ft),
                 *TRAIN]) == 0
    s = json.loads((ft / "finetune.json").read_text())
    assert "test_error_after" in s and "enc1a.conv" in s["nodes"]


def test_seed_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("VICNET_SEED", "7")
    assert main(["datagen", "--out", str(tmp_path / "d"), *DATAGEN[:2], "--soh-grid", "1.0",
                 "--protocols", "FastC", "--n-truncate", "1"]) == 0
    assert json.loads((tmp_path / "d" / "manifest.json").read_text())["config"]["seed"] == 7
    assert main(["datagen", "--out", str(tmp_path / "e"), "--seed", "3", "--modules", "1", "--soh-grid", "1.0",
                 "--protocols", "FastC", "--n-truncate", "1"]) == 0
    assert json.loads((tmp_path / "e" / "manifest.json").read_text())["config"]["seed"] == 3


def test_config_errors(tmp_path, work, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"modules": 3, "colour": "red"}))
    assert main(["datagen", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert "colour" in capsys.readouterr().err
    bad.write_text(json.dumps({"modules": "many"}))
    assert main(["datagen", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert main(["datagen"]) == 2
    assert main(["train", "--config", str(work / "data" / "manifest.json"), "--out", str(tmp_path / "t")]) == 2
    assert main(["train", "--data", str(work / "data"), "--out", str(tmp_path / "t"), "--preset", "resnet"]) == 2
    assert main(["eval", "--model", str(work / "unet"), "--data", str(work / "data"), "--out", str(tmp_path / "e"),
                 "--route", "direct"]) == 2


def test_data_errors(tmp_path, work):
    assert main(["train", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "t")]) == 3
    assert main(["construct", "--model", str(tmp_path / "nomodel"), "--data", str(work / "data"),
                 "--out", str(tmp_path / "c")]) == 3
    one = tmp_path / "one"
    assert main(["datagen", "--out", str(one), "--modules", "1", "--soh-grid", "1.0", "--protocols", "FastC",
                 "--n-truncate", "1"]) == 0
    assert main(["train", "--data", str(one), "--out", str(tmp_path / "t")]) == 3
