import configparser
import json
import os
import re
import shutil

import numpy as np
import pandas as pd
import pytest

from firmcomplexity import pipeline
from firmcomplexity.exceptions import ComputeError, ValidationError
from firmcomplexity.pipeline import load_config, model_specs, run_pipeline

TABLE1_TERMS = ["log Operative Revenue", "log Coherence", "EXPY",
                "log Out-of-block Diversification", "log In-block Diversification"]


def edit_config(src_dir, dst_dir, **sections):
    """Copy a dataset and rewrite keys of its config.ini."""
    shutil.copytree(src_dir, dst_dir, ignore=shutil.ignore_patterns("run*", "*.lock"))
    ini = configparser.ConfigParser()
    ini.read(dst_dir / "config.ini")
    for section, values in sections.items():
        if section not in ini:
            ini[section] = {}
        for k, v in values.items():
            ini[section][k] = str(v)
    with open(dst_dir / "config.ini", "w") as fh:
        ini.write(fh)
    return dst_dir / "config.ini"


def test_full_run_layout(small_run):
    out = small_run.out
    assert small_run.stages == ["ingest", "blocks", "indicators", "regress", "figures"]
    expected = ["ingest/ingest_report.json", "blocks/partition.csv", "blocks/block_composition.csv",
                "indicators/product_scores.csv", "indicators/complexity.csv",
                "indicators/expy.csv", "indicators/coherence.csv",
                "indicators/firm_year_indicators.csv", "regress/table1.txt",
                "regress/coefficients.csv", "regress/models.csv",
                "figures/heatmap_expy_revenue.csv", "figures/heatmap_din_dout.csv",
                "figures/curve_growth_diversification_ratio.csv", "manifest.json"]
    for rel in expected:
        assert os.path.isfile(os.path.join(out, rel)), rel
    assert not os.path.exists(out + ".staging") and not os.path.exists(out + ".lock")
    man = json.load(open(os.path.join(out, "manifest.json")))
    for key in ("inputs", "versions", "config", "seeds", "warnings", "outputs"):
        assert key in man
    assert set(man["outputs"]) >= set(expected) - {"manifest.json"}


def test_partition_csv_schema(small_run):
    part = pd.read_csv(os.path.join(small_run.out, "blocks", "partition.csv"))
    assert list(part.columns) == ["node_type", "node_id", "block_id"]
    assert set(part.node_type) == {"firm", "product"}
    sims = pd.read_csv(os.path.join(small_run.out, "indicators", "coherence.csv"))
    assert list(sims.columns) == ["firm_id", "year", "coherence", "degenerate"]
    cx = pd.read_csv(os.path.join(small_run.out, "indicators", "complexity.csv"))
    assert list(cx.columns) == ["hs6", "Q_raw", "logQ_z"]


def test_table1_has_both_models(small_run):
    text = open(os.path.join(small_run.out, "regress", "table1.txt")).read()
    lines = text.splitlines()
    assert "Growth" in lines[1] and "Profit per Employee" in lines[1]
    for term in TABLE1_TERMS:
        assert any(line.startswith(term) for line in lines), term
    assert "Sector dummies" in text and "YES" in text
    assert "Observations" in text and "Adjusted R-squared" in text


def test_every_report_number_traces_to_csv(small_run):
    coef = pd.read_csv(os.path.join(small_run.out, "regress", "coefficients.csv"),
                       keep_default_na=False, na_values=[""])
    models = pd.read_csv(os.path.join(small_run.out, "regress", "models.csv"))
    known = set()
    for v in pd.concat([coef["estimate"], coef["se_hc1"], models["adj_r_squared"]]).dropna():
        known.add(f"{v + 0.0:.3f}")
    known |= {str(n) for n in models["observations"]}
    for table in ("table1", "table2", "table3"):
        text = open(os.path.join(small_run.out, "regress", f"{table}.txt")).read()
        body = text.split("\n")[:-2]
        for token in re.findall(r"-?\d+\.\d{3}|(?<=\s)\d+(?=\s|$)", "\n".join(body)):
            assert token in known, (table, token)
    # each table1 cell is the CSV estimate plus its stars
    coef["stars"] = coef["stars"].fillna("")
    lines = open(os.path.join(small_run.out, "regress", "table1.txt")).read().splitlines()
    terms = ["log_revenue", "log_coherence", "expy", "log_d_out", "log_d_in"]
    for label, term in zip(TABLE1_TERMS, terms):
        cells = [line for line in lines if line.startswith(label)][0][len(label):].split()
        for cell, mid in zip(cells, ["table1_growth", "table1_profit_per_employee"]):
            row = coef[(coef.model_id == mid) & (coef.term == term)].iloc[0]
            assert cell == f"{row.estimate + 0.0:.3f}{row.stars}"


def test_rerun_is_byte_identical(small_dataset, small_run, tmp_path):
    cfg = load_config(str(small_dataset / "config.ini"), out=str(tmp_path / "again"))
    again = run_pipeline(cfg)
    a = open(os.path.join(small_run.out, "manifest.json"), "rb").read()
    b = open(os.path.join(again.out, "manifest.json"), "rb").read()
    assert a == b


def test_rerun_into_same_directory_replaces_it(small_dataset, tmp_path):
    d = tmp_path / "data"
    cfg_path = edit_config(small_dataset, d)
    cfg = load_config(str(cfg_path), out=str(d / "run"))
    first = run_pipeline(cfg, stop_after="ingest")
    second = run_pipeline(cfg, stop_after="ingest")
    assert first.manifest == second.manifest
    assert sorted(os.listdir(d / "run")) == ["ingest", "manifest.json"]


def test_horizon_beyond_data_fails_before_compute(small_dataset, tmp_path, monkeypatch):
    d = tmp_path / "data"
    cfg_path = edit_config(small_dataset, d, years={"dt": 5})
    called = []
    monkeypatch.setattr(pipeline, "_run", lambda *a: called.append(a))
    with pytest.raises(ValidationError, match="beyond the financial data"):
        load_config(str(cfg_path))
    assert not called and not (d / "results").exists()


@pytest.mark.parametrize("sections,match", [
    ({"blocks": {"resolution": "HS2"}}, "resolution"),
    ({"indicators": {"expy_weights": "gdp"}}, "expy_weights"),
    ({"bogus": {"a": 1}}, "unknown config section"),
    ({"inputs": {"exports": "missing.csv"}}, "not found"),
    ({"blocks": {"restarts": "many"}}, "cannot parse"),
])
def test_invalid_configs_rejected(small_dataset, tmp_path, sections, match):
    cfg_path = edit_config(small_dataset, tmp_path / "data", **sections)
    with pytest.raises(ValidationError, match=match):
        load_config(str(cfg_path))


def test_overrides_apply(small_dataset, tmp_path):
    cfg = load_config(str(small_dataset / "config.ini"), seed=42, out=str(tmp_path / "o"),
                      threads=2)
    assert (cfg.seed, cfg.threads, cfg.out) == (42, 2, str(tmp_path / "o"))
    assert len(model_specs(cfg)) == 8


def test_failure_removes_partial_outputs(small_dataset, tmp_path, monkeypatch):
    out = tmp_path / "failed"
    cfg = load_config(str(small_dataset / "config.ini"), out=str(out))

    def boom(design):
        raise ComputeError("singular design")

    monkeypatch.setattr(pipeline, "fit_design", boom)
    with pytest.raises(ComputeError, match=r"^\[regress\] singular design"):
        run_pipeline(cfg)
    assert not out.exists()
    assert not os.path.exists(str(out) + ".staging")
    assert not os.path.exists(str(out) + ".lock")


def test_lock_blocks_concurrent_run(small_dataset, tmp_path):
    out = tmp_path / "locked"
    open(str(out) + ".lock", "w").close()
    cfg = load_config(str(small_dataset / "config.ini"), out=str(out))
    with pytest.raises(ValidationError, match="locked"):
        run_pipeline(cfg, stop_after="ingest")


def test_refuses_foreign_directory(small_dataset, tmp_path):
    out = tmp_path / "foreign"
    out.mkdir()
    (out / "notes.txt").write_text("keep me")
    cfg = load_config(str(small_dataset / "config.ini"), out=str(out))
    with pytest.raises(ValidationError, match="refusing"):
        run_pipeline(cfg, stop_after="ingest")
    assert (out / "notes.txt").read_text() == "keep me"


def test_heatmaps_have_empty_cells_marked_missing(small_run):
    grid = pd.read_csv(os.path.join(small_run.out, "figures", "heatmap_din_dout.csv"))
    empty = grid["count"] == 0
    assert grid.loc[empty, "mean_smoothed"].isna().all()
    assert grid.loc[~empty, "mean_smoothed"].notna().all()
    man = small_run.manifest
    assert man["figures"]["heatmap_din_dout"]["occupied"] == int((~empty).sum())
    curve = pd.read_csv(os.path.join(small_run.out, "figures",
                                     "curve_growth_diversification_ratio.csv"))
    assert len(curve) == 100 and np.isfinite(curve["y"]).all()
