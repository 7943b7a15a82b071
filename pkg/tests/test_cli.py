import json
import subprocess
import sys

import numpy as np
import pytest

from tabulatime.cli import main
from tabulatime.io import load_bundle

TINY = {"layers": 1, "embed_dim": 8, "heads": 2, "head_hidden": 8, "tab_dim": 6}


def synth(tmp_path, name, *extra):
    out = tmp_path / name
    assert main(["synth", "--out", str(out), *extra]) == 0
    return out


def shrink(run_dir, **train):
    cfg = json.loads((run_dir / "run.json").read_text())
    cfg["model"].update(TINY)
    cfg["train"].update({"max_epochs": 2, "batch_size": 32, **train})
    (run_dir / "run.json").write_text(json.dumps(cfg))
    return run_dir / "run.json"


def test_synth_is_byte_identical_per_seed(tmp_path):
    args = ["--task", "classification", "--seed", "7", "--n-events", "50", "--days", "40"]
    a, b = synth(tmp_path, "a", *args), synth(tmp_path, "b", *args)
    for name in ("events.csv", "environment.csv", "run.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    c = synth(tmp_path, "c", "--task", "classification", "--seed", "8", "--n-events", "50", "--days", "40")
    assert (a / "events.csv").read_bytes() != (c / "events.csv").read_bytes()


def test_classification_round_trip(tmp_path, capsys):
    run = synth(tmp_path, "cls", "--task", "classification", "--seed", "1", "--n-events", "120",
                "--days", "60", "--missing-rate", "0.05")
    cfg = shrink(run)
    out = tmp_path / "out"
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "model.ttmb").exists()
    hist = json.loads((out / "history.json").read_text())
    assert len(hist["val_loss"]) == 2

    assert main(["evaluate", "--config", str(cfg), "--out", str(out)]) == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert {"accuracy", "precision", "recall", "f1"} <= set(metrics)
    roc = (out / "roc.csv").read_text().splitlines()
    assert roc[0] == "fpr,tpr" and roc[1] == "0,0"
    header = (out / "attention.csv").read_text().splitlines()[0].split(",")
    assert header[0] == "event_id" and "PM10_day2" in header and len(header) == 1 + 6 + 50

    assert main(["importance", "--config", str(cfg), "--out", str(out), "--repeats", "2"]) == 0
    feats = (out / "feature_importance.csv").read_text().splitlines()
    assert feats[0] == "feature,importance,std" and len(feats) == 1 + 9 + 10
    steps = (out / "step_importance.csv").read_text().splitlines()
    assert [r.split(",")[0] for r in steps[1:]] == [str(d) for d in range(1, 11)]

    before = (out / "metrics.json").read_bytes()
    assert main(["evaluate", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "metrics.json").read_bytes() == before


def test_training_twice_gives_identical_artifacts(tmp_path):
    run = synth(tmp_path, "cls", "--task", "classification", "--seed", "2", "--n-events", "80", "--days", "40")
    cfg = shrink(run)
    for name in ("o1", "o2"):
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / name)]) == 0
    for name in ("model.ttmb", "history.json"):
        assert (tmp_path / "o1" / name).read_bytes() == (tmp_path / "o2" / name).read_bytes()


def test_forecast_command(tmp_path):
    run = synth(tmp_path, "fc", "--task", "forecasting", "--seed", "0", "--days", "40")
    cfg = shrink(run)
    out = tmp_path / "out"
    assert main(["train", "--config", str(cfg), "--out", str(out), "--window-days", "3"]) == 0
    assert load_bundle(out / "model.ttmb").model_kind == "forecaster"
    assert main(["forecast", "--config", str(cfg), "--out", str(out), "--window-days", "3"]) == 0
    rows = (out / "forecast.csv").read_text().splitlines()
    assert rows[0] == "timestamp,channel,step,predicted,actual"
    assert len(rows) > 1 and (len(rows) - 1) % (4 * 48) == 0
    assert main(["evaluate", "--config", str(cfg), "--out", str(out), "--window-days", "3"]) == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert {"mse", "mae", "mse_native", "mae_native"} <= set(metrics)


def test_sensitivity_imputation_table(tmp_path):
    run = synth(tmp_path, "cls", "--task", "classification", "--seed", "3", "--n-events", "80",
                "--days", "40", "--missing-rate", "0.05")
    cfg = shrink(run, max_epochs=1)
    assert main(["sensitivity-imputation", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    rows = (tmp_path / "o" / "imputation_sensitivity.csv").read_text().splitlines()
    assert rows[0] == "method,accuracy,auc,repeats"
    assert [r.split(",")[0] for r in rows[1:]] == ["mean", "mice", "knn"]


def test_errors_give_nonzero_exit(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "missing.json")]) == 1
    assert "error:" in capsys.readouterr().err
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code != 0
    proc = subprocess.run([sys.executable, "-m", "tabulatime", "train", "--bogus"], capture_output=True)
    assert proc.returncode != 0 and b"usage" in proc.stderr
