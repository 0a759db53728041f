from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

import cli
import training
from checkpoint import load_checkpoint
from errors import ConfigError
from section_io import read_section
from seismic_data import ImpedanceSection

SMALL_MODEL = ["--blocks", "2", "--kernel", "3", "--width", "4", "--step", "4"]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("data")
    code = cli.main(
        ["generate", "--out", str(out), "--traces", "12", "--samples", "48", "--seed", "3"]
    )
    assert code == 0
    return out


@pytest.fixture(scope="module")
def train_dir(tmp_path_factory, data_dir) -> Path:
    out = tmp_path_factory.mktemp("train")
    code = cli.main(
        [
            "train",
            "--seismic",
            str(data_dir / "seismic.seis"),
            "--impedance",
            str(data_dir / "impedance.seis"),
            "--out",
            str(out),
            "--epochs",
            "3",
            *SMALL_MODEL,
        ]
    )
    assert code == 0
    return out


def _pair(data_dir: Path) -> list:
    return ["--seismic", str(data_dir / "seismic.seis"), "--impedance", str(data_dir / "impedance.seis")]


def test_generate_writes_pair_and_manifest(data_dir):
    seismic = read_section(data_dir / "seismic.seis")
    impedance = read_section(data_dir / "impedance.seis", ImpedanceSection)
    assert seismic.extents == impedance.extents == (12, 48)
    manifest = json.loads((data_dir / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["command"] == "generate"
    assert manifest["seed"] == 3
    assert manifest["config"]["n_traces"] == 12
    assert set(manifest["hashes"]) == set(manifest["outputs"].values())


def test_generate_is_reproducible(tmp_path, data_dir):
    code = cli.main(
        ["generate", "--out", str(tmp_path), "--traces", "12", "--samples", "48", "--seed", "3"]
    )
    assert code == 0
    for name in ("seismic.seis", "impedance.seis"):
        assert (tmp_path / name).read_bytes() == (data_dir / name).read_bytes()


def test_generate_single_layer(tmp_path):
    code = cli.main(
        ["generate", "--out", str(tmp_path), "--traces", "4", "--samples", "20", "--layers", "1"]
    )
    assert code == 0
    values = read_section(tmp_path / "impedance.seis", ImpedanceSection).values.data
    assert np.unique(values).size == 1


def test_generate_invalid_config_exits_2(tmp_path):
    assert cli.main(["generate", "--out", str(tmp_path), "--freq", "-1"]) == 2


def test_train_writes_loadable_checkpoint(train_dir):
    ckpt = load_checkpoint(train_dir / "checkpoint.tcn")
    assert len(ckpt.history) == 3
    assert ckpt.stats.provenance == (0, 4, 8)
    history = (train_dir / "history.csv").read_text(encoding="utf-8").splitlines()
    assert history[0] == "epoch,loss" and len(history) == 4
    manifest = json.loads((train_dir / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["options"]["epochs"] == 3
    assert manifest["config"]["lr"] == 0.001
    assert manifest["metadata"]["optimizer_steps"] == 3


def test_train_is_reproducible_from_manifest(tmp_path, train_dir):
    code = cli.main(
        ["train", "--config", str(train_dir / "manifest.json"), "--out", str(tmp_path)]
    )
    assert code == 0
    for name in ("checkpoint.tcn", "history.csv"):
        assert (tmp_path / name).read_bytes() == (train_dir / name).read_bytes()


def test_train_with_mismatched_sections_exits_2(tmp_path, data_dir, capsys):
    other = tmp_path / "other"
    assert cli.main(["generate", "--out", str(other), "--traces", "5", "--samples", "48"]) == 0
    code = cli.main(
        [
            "train",
            "--seismic",
            str(data_dir / "seismic.seis"),
            "--impedance",
            str(other / "impedance.seis"),
            "--out",
            str(tmp_path / "train"),
            "--epochs",
            "1",
            *SMALL_MODEL,
        ]
    )
    assert code == 2
    err = capsys.readouterr().err
    assert "12x48" in err and "5x48" in err


def test_train_divergence_exits_3(tmp_path, data_dir, monkeypatch):
    def exploding(params, state, x, y, config, rng):
        return float("nan"), params, state

    monkeypatch.setattr(training, "run_epoch", exploding)
    code = cli.main(
        ["train", *_pair(data_dir), "--out", str(tmp_path), "--epochs", "2", *SMALL_MODEL]
    )
    assert code == 3


def test_missing_input_exits_2(tmp_path):
    code = cli.main(
        [
            "predict",
            "--seismic",
            str(tmp_path / "absent.seis"),
            "--checkpoint",
            str(tmp_path / "absent.tcn"),
            "--out",
            str(tmp_path),
        ]
    )
    assert code == 2


def test_predict_then_evaluate(tmp_path, data_dir, train_dir, capsys):
    ckpt = str(train_dir / "checkpoint.tcn")
    code = cli.main(
        [
            "predict",
            "--seismic",
            str(data_dir / "seismic.seis"),
            "--checkpoint",
            ckpt,
            "--out",
            str(tmp_path / "pred"),
            "--threads",
            "2",
        ]
    )
    assert code == 0
    manifest = json.loads((tmp_path / "pred" / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["metadata"]["inference_seconds"] >= 0.0
    capsys.readouterr()

    code = cli.main(
        [
            "evaluate",
            *_pair(data_dir),
            "--checkpoint",
            ckpt,
            "--predicted",
            str(tmp_path / "pred" / "predicted.seis"),
            "--out",
            str(tmp_path / "eval"),
        ]
    )
    assert code == 0
    table = capsys.readouterr().out.splitlines()
    assert "Training" in table[0] and "Validation" in table[0]
    assert table[1].startswith("PCC") and table[2].startswith("r2")
    metrics = (tmp_path / "eval" / "metrics.csv").read_text(encoding="utf-8").splitlines()
    assert metrics[0] == "split,trace_index,pcc,r2"


def test_evaluate_without_predicted_file(tmp_path, data_dir, train_dir, capsys):
    code = cli.main(
        [
            "evaluate",
            *_pair(data_dir),
            "--checkpoint",
            str(train_dir / "checkpoint.tcn"),
            "--out",
            str(tmp_path),
            "--validation-includes-training",
        ]
    )
    assert code == 0
    rows = (tmp_path / "metrics.csv").read_text(encoding="utf-8").splitlines()
    assert len(rows) == 1 + 3 + 12


def test_export(tmp_path, data_dir, train_dir):
    code = cli.main(
        [
            "export",
            *_pair(data_dir),
            "--checkpoint",
            str(train_dir / "checkpoint.tcn"),
            "--out",
            str(tmp_path),
            "--positions",
            "0.5",
        ]
    )
    assert code == 0
    assert (tmp_path / "traces_6.csv").exists()
    assert (tmp_path / "scatter.svg").exists()
    assert (tmp_path / "manifest.json").exists()


def test_gradcheck_passes(capsys):
    assert cli.main(["gradcheck"]) == 0
    out = capsys.readouterr().out
    assert "conv1d_symmetric" in out and "model_causal" in out
    assert "FAIL" not in out


def test_gradcheck_failure_exits_3(monkeypatch, capsys):
    monkeypatch.setattr(cli, "run_gradient_suite", lambda seed: {"relu": (0.5, 1e-5)})
    assert cli.main(["gradcheck"]) == 3
    assert "FAIL" in capsys.readouterr().out


def test_sweep(tmp_path, data_dir):
    code = cli.main(
        [
            "sweep",
            *_pair(data_dir),
            "--out",
            str(tmp_path),
            "--epochs",
            "2",
            "--width",
            "3",
            "--step",
            "4",
            "--kernels",
            "2",
            "3",
            "--blocks-list",
            "1",
            "2",
        ]
    )
    assert code == 0
    rows = (tmp_path / "sweep.csv").read_text(encoding="utf-8").splitlines()
    assert rows[0] == ",".join(cli.SWEEP_COLUMNS)
    assert len(rows) == 5
    assert rows[4].startswith("3,2,13,")


def test_defaults_echo_published_hyperparameters():
    options = cli.command_defaults("train")
    assert (options["lr"], options["wd"], options["epochs"]) == (0.001, 0.0001, 2941)
    assert (options["dropout"], options["kernel"], options["blocks"]) == (0.2, 5, 6)
    assert options["step"] == 150


def test_option_precedence(tmp_path, monkeypatch):
    profiles = tmp_path / "profiles.yaml"
    profiles.write_text(
        "profiles:\n  quick:\n    train:\n      epochs: 10\n      lr: 0.01\n      kernel: 3\n",
        encoding="utf-8",
    )
    monkeypatch.setattr(cli, "RUN_PROFILES_PATH", profiles)
    config = tmp_path / "options.json"
    config.write_text(json.dumps({"epochs": 20, "kernel": 7}), encoding="utf-8")

    options = cli.resolve_options("train", "quick", str(config), {"kernel": 9})
    assert options["lr"] == 0.01
    assert options["epochs"] == 20
    assert options["kernel"] == 9
    assert options["blocks"] == 6


def test_shipped_profiles():
    path = Path(__file__).resolve().parents[1] / "run_profiles.yaml"
    assert cli.load_profile("ci", "generate", path)["traces"] == 500
    assert cli.load_profile("ci", "train", path)["epochs"] == 800
    overfit = cli.load_profile("overfit", "evaluate", path)
    assert overfit["dropout"] == 0.0 and overfit["validation_includes_training"] is True
    published = cli.load_profile("published", "train", path)
    assert published["step"] == 150 and published["epochs"] == 2941


def test_config_errors(tmp_path, monkeypatch):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"epochz": 3}), encoding="utf-8")
    with pytest.raises(ConfigError):
        cli.resolve_options("train", None, str(bad), {})

    manifest = tmp_path / "manifest.json"
    manifest.write_text(json.dumps({"command": "generate", "options": {}}), encoding="utf-8")
    with pytest.raises(ConfigError):
        cli.resolve_options("train", None, str(manifest), {})

    monkeypatch.setattr(cli, "RUN_PROFILES_PATH", tmp_path / "none.yaml")
    with pytest.raises(ConfigError):
        cli.resolve_options("train", "published", None, {})
    assert cli.main(["gradcheck", "--profile", "published"]) == 2
