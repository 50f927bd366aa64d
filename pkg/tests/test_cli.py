"""Exit codes and side effects of the command-line entry point."""

import json
from pathlib import Path

import pytest

from coresel.cli import main
from coresel.pipeline import PipelineConfig
from coresel.synth import benchmark_config, write_mixture_files


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    write_mixture_files(root / "data", seed=5, total=600)
    cfg = benchmark_config(root / "data", root / "run", seed=5, k=8)
    doc = cfg.canonical()
    doc["out_dir"] = cfg.out_dir
    config_path = root / "config.json"
    config_path.write_text(json.dumps(doc, indent=2) + "\n")
    return root, config_path


def test_select_succeeds(workspace, capsys):
    root, config_path = workspace
    assert main(["select", "--config", str(config_path)]) == 0
    out = capsys.readouterr().out
    assert "selected 60 of 600 samples" in out
    assert (root / "run" / "manifest.json").exists()


def test_select_overrides(workspace):
    root, config_path = workspace
    out = root / "override"
    code = main(
        [
            "select",
            "--config",
            str(config_path),
            "--ratio",
            "0.2",
            "--sampler",
            "pca",
            "--seed",
            "9",
            "--out",
            str(out),
        ]
    )
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["budget"] == 120
    assert manifest["seed"] == 9
    resolved = json.loads((out / "config.json").read_text())
    assert resolved["sampler"]["kind"] == "pca"
    # the resolved config is itself loadable
    PipelineConfig.from_json(out / "config.json")


def test_select_missing_config_exits_2(tmp_path, capsys):
    assert main(["select", "--config", str(tmp_path / "nope.json")]) == 2
    assert "error" in capsys.readouterr().err


def test_select_bad_dataset_exits_2(workspace, tmp_path, capsys):
    _, config_path = workspace
    doc = json.loads(config_path.read_text())
    doc["spaces"][0]["path"] = str(tmp_path / "gone.feat")
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    assert main(["select", "--config", str(bad)]) == 2
    assert "[features]" in capsys.readouterr().err


def test_report_succeeds_after_select(workspace, capsys):
    root, config_path = workspace
    main(["select", "--config", str(config_path)])
    assert main(["report", "--run", str(root / "run")]) == 0
    out = capsys.readouterr().out
    assert "coords:" in out and "summary:" in out
    assert (root / "run" / "coords.csv").exists()
    assert (root / "run" / "summary.json").exists()


def test_report_incomplete_dir_exits_2(tmp_path, capsys):
    assert main(["report", "--run", str(tmp_path)]) == 2
    assert "[report]" in capsys.readouterr().err


def test_sweep_succeeds(workspace, capsys):
    root, config_path = workspace
    assert main(["sweep", "--config", str(config_path), "--ratios", "0.05,0.1"]) == 0
    out = capsys.readouterr().out
    assert "ratio 0.05: 30 samples" in out
    assert "ratio 0.1: 60 samples" in out
    assert (root / "run" / "ratio_0.05" / "manifest.json").exists()


def test_sweep_unparseable_ratios_exits_2(workspace, capsys):
    _, config_path = workspace
    assert main(["sweep", "--config", str(config_path), "--ratios", "abc"]) == 2
    assert "cannot parse ratios" in capsys.readouterr().err


def test_sweep_out_of_range_ratio_exits_2(workspace, capsys):
    _, config_path = workspace
    assert main(["sweep", "--config", str(config_path), "--ratios", "1.5"]) == 2
    assert "[quota]" in capsys.readouterr().err


def test_unknown_command_raises_system_exit():
    with pytest.raises(SystemExit):
        main(["frobnicate"])
