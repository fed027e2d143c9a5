import os
import subprocess
import sys

import pytest

from firmcomplexity import pipeline
from firmcomplexity.cli import EXIT_COMPUTE, EXIT_OK, EXIT_VALIDATION, main
from firmcomplexity.exceptions import ComputeError


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli") / "data"
    assert main(["synth", "--out", str(d), "--seed", "2", "--firms", "300",
                 "--products", "210"]) == EXIT_OK
    return d


def test_synth_writes_inputs_and_config(dataset):
    for name in ("exports.csv", "financials.csv", "gdp.csv", "hs_map.csv", "world_trade.csv",
                 "truth.json", "config.ini"):
        assert (dataset / name).is_file()


@pytest.mark.parametrize("stage,last", [("ingest", "ingest"), ("blocks", "blocks"),
                                        ("indicators", "indicators")])
def test_stage_subcommands(dataset, tmp_path, stage, last, capsys):
    out = tmp_path / stage
    assert main([stage, "--config", str(dataset / "config.ini"), "--out", str(out)]) == EXIT_OK
    assert (out / "manifest.json").is_file()
    assert (out / last).is_dir()
    assert "complete" in capsys.readouterr().out


def test_run_with_overrides(dataset, tmp_path):
    out = tmp_path / "full"
    code = main(["run", "--config", str(dataset / "config.ini"), "--out", str(out),
                 "--seed", "7", "--threads", "1"])
    assert code == EXIT_OK
    assert (out / "regress" / "table1.txt").is_file()
    assert (out / "figures" / "heatmap_din_dout.csv").is_file()
    assert '"seed": 7' in (out / "manifest.json").read_text()


def test_run_requires_config(capsys):
    with pytest.raises(SystemExit) as err:
        main(["run"])
    assert err.value.code == EXIT_VALIDATION
    assert "--config" in capsys.readouterr().err


def test_missing_config_file_is_validation_error(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "none.ini")]) == EXIT_VALIDATION
    assert "validation error" in capsys.readouterr().err


def test_compute_failure_exit_code(dataset, tmp_path, monkeypatch, capsys):
    def boom(design):
        raise ComputeError("singular")

    monkeypatch.setattr(pipeline, "fit_design", boom)
    code = main(["regress", "--config", str(dataset / "config.ini"), "--out",
                 str(tmp_path / "r")])
    assert code == EXIT_COMPUTE
    assert "[regress]" in capsys.readouterr().err
    assert not (tmp_path / "r").exists()


def test_bad_synth_parameters(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "s"), "--firms", "2"]) == EXIT_VALIDATION


def test_module_entry_point(tmp_path):
    env = {**os.environ, "PYTHONPATH": os.pathsep.join(sys.path)}
    proc = subprocess.run([sys.executable, "-m", "firmcomplexity", "run", "--config",
                           str(tmp_path / "none.ini")], capture_output=True, text=True, env=env)
    assert proc.returncode == EXIT_VALIDATION
    proc = subprocess.run([sys.executable, "-m", "firmcomplexity", "--help"],
                          capture_output=True, text=True, env=env)
    assert proc.returncode == 0
    for name in ("ingest", "blocks", "indicators", "regress", "figures", "synth", "run"):
        assert name in proc.stdout
