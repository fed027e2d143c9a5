"""End-to-end run: ingest, blocks, indicators, regressions and figure data."""

from __future__ import annotations

import configparser
import hashlib
import json
import logging
import os
import platform
import shutil
import warnings
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from . import __version__
from .blocks import block_composition
from .econometrics import (RegressionSpec, VariablePanel, assemble_design, backward_mean,
                           fit_design, growth, model_summary_frame, profit_per_employee,
                           regression_table, results_frame)
from .exceptions import ComputeError, FirmComplexityError, ValidationError
from .figures import emit_heatmap, emit_nonparametric_curve, render_heatmap
from .indicators import (YEARLY_INDICATORS, IndicatorSettings, detect_blocks, indicators_long,
                         product_level, sectors_of, yearly_indicators)
from .ingest import (EXPORT_FIELDS, FINANCIAL_FIELDS, GDP_FIELDS, HS_MAP_FIELDS,
                     WORLD_TRADE_FIELDS, check_hs_coverage, filter_persistent_firms, load_exports,
                     load_financials, load_gdp, load_hs_map, load_world_trade)

logger = logging.getLogger(__name__)

STAGES = ("ingest", "blocks", "indicators", "regress", "figures")
INPUTS = ("exports", "financials", "gdp", "hs_map", "world_trade")
_FIELDS = {"exports": EXPORT_FIELDS, "financials": FINANCIAL_FIELDS, "gdp": GDP_FIELDS,
           "hs_map": HS_MAP_FIELDS, "world_trade": WORLD_TRADE_FIELDS}


@dataclass
class RunConfig:
    inputs: dict
    export_years: tuple
    financial_years: tuple
    t_star: int = 2015
    dt: int = 4
    delimiter: str = ","
    schemas: dict = field(default_factory=dict)
    indicators: IndicatorSettings = field(default_factory=IndicatorSettings)
    resolution: str = "HS4"
    restarts: int = 32
    max_blocks: int = 32
    n_blocks: int | None = None
    max_iter: int = 200
    seed: int = 0
    window: int = 3
    sector_dummies: bool = True
    log1p_diversification: bool = False
    out: str = "results"
    heatmap_bins: int = 30
    heatmap_sigma: float = 3.0
    curve_bandwidth: float | None = None
    curve_points: int = 100
    render_png: bool = False
    similarity_csv_max: int = 5_000_000
    threads: int = 1

    def validate(self, check_files=True):
        for name in INPUTS:
            if name not in self.inputs:
                raise ValidationError(f"[inputs] is missing {name!r}")
            if check_files and not os.path.isfile(self.inputs[name]):
                raise ValidationError(f"input file not found: {self.inputs[name]}")
        e0, e1 = self.export_years
        f0, f1 = self.financial_years
        t, dt, w = self.t_star, self.dt, self.window
        if e1 < e0 or f1 < f0:
            raise ValidationError("year ranges must be increasing")
        if dt < 1 or w < 1:
            raise ValidationError("dt and window must be positive")
        if t + dt > f1:
            raise ValidationError(f"t_star + dt = {t + dt} lies beyond the financial data "
                                  f"(last year {f1})")
        if t - (w - 1) < f0:
            raise ValidationError(f"the smoothing window at t_star starts in {t - w + 1}, "
                                  f"before the financial data ({f0})")
        if not (e0 <= t - (w - 1) and t <= e1):
            raise ValidationError(f"export years {e0}-{e1} must cover {t - w + 1}-{t}")
        if self.resolution not in ("HS4", "HS6"):
            raise ValidationError("resolution must be HS4 or HS6")
        if self.indicators.expy_weights not in ("volume", "rca"):
            raise ValidationError("expy_weights must be volume or rca")
        if self.indicators.complexity_transform not in ("log", "raw"):
            raise ValidationError("complexity_transform must be log or raw")
        if not self.indicators.rca_threshold > 0:
            raise ValidationError("rca_threshold must be positive")
        if self.indicators.similarity_eps < 0:
            raise ValidationError("similarity_eps must be non-negative")
        if self.restarts < 1 or self.max_blocks < 2 or self.max_iter < 1:
            raise ValidationError("restarts, max_blocks and max_iter must be positive")
        if self.n_blocks is not None and self.n_blocks < 1:
            raise ValidationError("n_blocks must be positive")
        if self.heatmap_bins < 1 or self.heatmap_sigma < 0 or self.curve_points < 2:
            raise ValidationError("invalid figure settings")
        if self.threads < 1:
            raise ValidationError("threads must be positive")
        return self

    def to_dict(self):
        d = asdict(self)
        d["inputs"] = {k: os.path.basename(v) for k, v in self.inputs.items()}
        d.pop("out")
        return d


# ---------------------------------------------------------------------------
# config file

def _get(section, key, conv, default):
    if section is None or key not in section:
        return default
    raw = section[key].strip()
    if raw.lower() in ("", "none", "auto"):
        return None if default is None or conv is not str else default
    try:
        return conv(raw)
    except ValueError as exc:
        raise ValidationError(f"[{section.name}] {key}: cannot parse {raw!r}") from exc


def _bool(raw):
    v = raw.strip().lower()
    if v in ("1", "yes", "true", "on"):
        return True
    if v in ("0", "no", "false", "off"):
        return False
    raise ValueError(raw)


def load_config(path, seed=None, out=None, threads=None, check_files=True):
    """Read and fully validate an INI run configuration.

    Relative input and output paths resolve against the config file's
    directory. ``seed``, ``out`` and ``threads`` override the file.
    """
    if not os.path.isfile(path):
        raise ValidationError(f"config file not found: {path}")
    ini = configparser.ConfigParser()
    try:
        ini.read(path)
    except configparser.Error as exc:
        raise ValidationError(f"malformed config: {exc}") from exc
    known = {"inputs", "years", "indicators", "blocks", "regression", "output"}
    for name in ini.sections():
        if name not in known and not name.startswith("schema."):
            raise ValidationError(f"unknown config section [{name}]")
    if "inputs" not in ini or "years" not in ini:
        raise ValidationError("config needs [inputs] and [years] sections")
    base = os.path.dirname(os.path.abspath(path))
    inp = ini["inputs"]
    inputs = {k: os.path.join(base, inp[k]) for k in INPUTS if k in inp}
    schemas = {}
    for name in ini.sections():
        if name.startswith("schema."):
            table = name.split(".", 1)[1]
            if table not in _FIELDS:
                raise ValidationError(f"schema for unknown table {table!r}")
            unknown = set(ini[name]) - set(_FIELDS[table])
            if unknown:
                raise ValidationError(f"[{name}] unknown fields {sorted(unknown)}")
            schemas[table] = dict(ini[name])
    yr = ini["years"]
    for key in ("export_start", "export_end", "financial_start", "financial_end"):
        if key not in yr:
            raise ValidationError(f"[years] is missing {key!r}")
    ind = ini["indicators"] if "indicators" in ini else None
    blk = ini["blocks"] if "blocks" in ini else None
    reg = ini["regression"] if "regression" in ini else None
    outs = ini["output"] if "output" in ini else None
    settings = IndicatorSettings(
        rca_threshold=_get(ind, "rca_threshold", float, 1.0),
        expy_weights=_get(ind, "expy_weights", str, "volume"),
        similarity_eps=_get(ind, "similarity_eps", float, 0.0),
        fitness_tol=_get(ind, "fitness_tol", float, 1e-8),
        fitness_max_iter=_get(ind, "fitness_max_iter", int, 1000),
        complexity_transform=_get(ind, "complexity_transform", str, "log"))
    out_dir = out if out is not None else os.path.join(base, _get(outs, "directory", str,
                                                                  "results"))
    cfg = RunConfig(
        inputs=inputs,
        export_years=(_get(yr, "export_start", int, None), _get(yr, "export_end", int, None)),
        financial_years=(_get(yr, "financial_start", int, None),
                         _get(yr, "financial_end", int, None)),
        t_star=_get(yr, "t_star", int, 2015), dt=_get(yr, "dt", int, 4),
        delimiter=_get(inp, "delimiter", str, ","), schemas=schemas, indicators=settings,
        resolution=_get(blk, "resolution", str, "HS4").upper(),
        restarts=_get(blk, "restarts", int, 32), max_blocks=_get(blk, "max_blocks", int, 32),
        n_blocks=_get(blk, "n_blocks", int, None), max_iter=_get(blk, "max_iter", int, 200),
        seed=_get(blk, "seed", int, 0) if seed is None else int(seed),
        window=_get(reg, "window", int, 3),
        sector_dummies=_get(reg, "sector_dummies", _bool, True),
        log1p_diversification=_get(reg, "log1p_diversification", _bool, False),
        out=out_dir,
        heatmap_bins=_get(outs, "heatmap_bins", int, 30),
        heatmap_sigma=_get(outs, "heatmap_sigma", float, 3.0),
        curve_bandwidth=_get(outs, "curve_bandwidth", float, None),
        curve_points=_get(outs, "curve_points", int, 100),
        render_png=_get(outs, "render_png", _bool, False),
        similarity_csv_max=_get(outs, "similarity_csv_max", int, 5_000_000),
        threads=int(threads) if threads is not None else 1)
    return cfg.validate(check_files=check_files)


# ---------------------------------------------------------------------------
# run state

@dataclass
class RunReport:
    out: str
    stages: list = field(default_factory=list)
    manifest: dict = field(default_factory=dict)
    results: dict = field(default_factory=dict)


def sha256_file(path, chunk=1 << 20):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        while True:
            b = fh.read(chunk)
            if not b:
                break
            h.update(b)
    return h.hexdigest()


@contextmanager
def _lock(out):
    parent = os.path.dirname(os.path.abspath(out)) or "."
    os.makedirs(parent, exist_ok=True)
    path = os.path.abspath(out) + ".lock"
    try:
        fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError as exc:
        raise ValidationError(f"output directory is locked by another run: {path}") from exc
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        try:
            os.unlink(path)
        except FileNotFoundError:
            pass


@contextmanager
def _stage(name, log):
    """Attribute errors to a stage and count its warnings."""
    logger.info("stage %s", name)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            yield
        except FirmComplexityError as exc:
            raise type(exc)(f"[{name}] {exc}") from exc
        except (MemoryError, FloatingPointError, np.linalg.LinAlgError) as exc:
            raise ComputeError(f"[{name}] {type(exc).__name__}: {exc}") from exc
        finally:
            messages = [str(w.message) for w in caught]
            log[name] = {"count": len(messages), "messages": sorted(set(messages))[:50]}
            for m in sorted(set(messages)):
                logger.warning("[%s] %s", name, m)


def _csv(frame, path, index=False):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    frame.to_csv(path, index=index, float_format="%.10g", lineterminator="\n")


def _json(obj, path):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(type(o))


def _finite(x):
    return None if x is None or not np.isfinite(x) else float(x)


# ---------------------------------------------------------------------------
# models

def model_specs(cfg):
    """(model_id, table, column label, spec) for every regression emitted."""
    base = ("revenue", "coherence", "expy", "d_out", "d_in")
    common = dict(t_star=cfg.t_star, dt=cfg.dt, sector_dummies=cfg.sector_dummies,
                  log1p_diversification=cfg.log1p_diversification, window=cfg.window)
    section = ("revenue", "coherence", "expy", "d_out_section", "d_in_section")
    complexity = ("revenue", "coherence", "avg_complexity", "d_out", "d_in")
    out = []
    for dep, label in (("growth", "Growth"), ("profit_per_employee", "Profit per Employee")):
        out.append((f"table1_{dep}", "table1", label,
                    RegressionSpec(dependent=dep, covariates=base, label=label, **common)))
    for dep, label in (("growth", "Growth"), ("profit_per_employee", "Profit per Employee")):
        out.append((f"table2_{dep}_section", "table2", f"{label} (sections)",
                    RegressionSpec(dependent=dep, covariates=section, label=label, **common)))
        out.append((f"table2_{dep}_block", "table2", f"{label} (blocks)",
                    RegressionSpec(dependent=dep, covariates=base, label=label, **common)))
    for dep, label in (("growth", "Growth"), ("profit_per_employee", "Profit per Employee")):
        out.append((f"table3_{dep}", "table3", label,
                    RegressionSpec(dependent=dep, covariates=complexity, label=label, **common)))
    return out


def firm_variables(panel, cfg, sectors):
    """Firm-level values at t*: dependents, smoothed covariates and sector."""
    t, dt, w = cfg.t_star, cfg.dt, cfg.window
    rev = backward_mean(panel.revenue, w)
    g = growth(rev, t, dt)
    frame = pd.DataFrame({"G": g["G"]})
    frame["revenue"] = rev[t] if t in rev.columns else np.nan
    frame = frame.join(panel.ppe.get(t + dt, pd.Series(dtype=float)).rename("profit_per_employee"),
                       how="outer")
    for name, table in panel.covariates.items():
        sm = backward_mean(table, w)
        frame = frame.join(sm.get(t, pd.Series(dtype=float)).rename(name), how="outer")
    frame = frame.join(sectors.rename("sector"), how="outer")
    frame.index.name = "firm_id"
    return frame.sort_index()


# ---------------------------------------------------------------------------
# driver

def run_pipeline(cfg, stop_after="figures"):
    """Execute the stages up to ``stop_after`` and publish outputs atomically.

    Outputs are written to a staging directory that replaces ``cfg.out`` only
    on success; on failure it is removed.
    """
    if stop_after not in STAGES:
        raise ValidationError(f"unknown stage {stop_after!r}")
    cfg.validate()
    out = os.path.abspath(cfg.out)
    if os.path.isdir(out) and os.listdir(out) and not os.path.isfile(
            os.path.join(out, "manifest.json")):
        raise ValidationError(
            f"refusing to overwrite non-empty directory without a manifest: {out}")
    with _lock(out):
        staging = out + ".staging"
        if os.path.isdir(staging):
            shutil.rmtree(staging)
        os.makedirs(staging)
        try:
            report = _run(cfg, staging, stop_after)
        except BaseException:
            shutil.rmtree(staging, ignore_errors=True)
            raise
        if os.path.isdir(out):
            shutil.rmtree(out)
        os.replace(staging, out)
        report.out = out
    return report


def _run(cfg, d, stop_after):
    P = lambda *parts: os.path.join(d, *parts)  # noqa: E731
    warn_log = {}
    man = {
        "package_version": __version__,
        "versions": {"python": platform.python_version(), "numpy": np.__version__,
                     "pandas": pd.__version__, **_lib_versions()},
        "config": cfg.to_dict(),
        "seeds": {"blocks": cfg.seed},
        "inputs": {k: {"file": os.path.basename(v), "sha256": sha256_file(v)}
                   for k, v in sorted(cfg.inputs.items())},
        "stages_run": [],
        "warnings": warn_log,
    }
    report = RunReport(out=d)
    t, w = cfg.t_star, cfg.window
    ex_years = cfg.export_years

    with _stage("ingest", warn_log):
        sch = cfg.schemas
        hs_map = load_hs_map(cfg.inputs["hs_map"], sch.get("hs_map"), cfg.delimiter)
        exports = load_exports(cfg.inputs["exports"], sch.get("exports"), cfg.delimiter,
                               years=ex_years)
        check_hs_coverage(exports, hs_map)
        fin = load_financials(cfg.inputs["financials"], sch.get("financials"), cfg.delimiter,
                              years=cfg.financial_years)
        gdp = load_gdp(cfg.inputs["gdp"], sch.get("gdp"), cfg.delimiter)
        world = load_world_trade(cfg.inputs["world_trade"], sch.get("world_trade"), cfg.delimiter)
        persistent = filter_persistent_firms(exports, ex_years)
        if len(persistent.firm_ids) == 0:
            raise ValidationError("no firm exports in every year of the export range")
        ingest = {
            "exports": exports.report.to_dict(), "financials": fin.report.to_dict(),
            "world_trade": world.report.to_dict(),
            "n_firms_loaded": int(len(exports.firm_ids)),
            "n_firms_persistent": int(len(persistent.firm_ids)),
            "n_products": int(len(persistent.products)),
            "n_countries": int(len(gdp.gdp_pc)),
        }
        _json(ingest, P("ingest", "ingest_report.json"))
    man["ingest"] = {k: v for k, v in ingest.items() if not isinstance(v, dict)}
    man["ingest"]["rejected"] = {k: ingest[k]["n_rejected"]
                                 for k in ("exports", "financials", "world_trade")}
    man["stages_run"].append("ingest")
    del exports
    if stop_after == "ingest":
        return _finish(man, d, report)

    with _stage("blocks", warn_log):
        graph, part, part_hs6 = detect_blocks(
            persistent, hs_map, ex_years, resolution=cfg.resolution,
            threshold=cfg.indicators.rca_threshold, seed=cfg.seed, restarts=cfg.restarts,
            max_blocks=cfg.max_blocks, n_blocks=cfg.n_blocks, max_iter=cfg.max_iter,
            n_jobs=cfg.threads)
        sectors = sectors_of(persistent, hs_map, ex_years)
        _csv(part.to_frame(), P("blocks", "partition.csv"))
        _csv(part_hs6.col_labels.rename("block_id").rename_axis("hs6").reset_index(),
             P("blocks", "product_blocks_hs6.csv"))
        _csv(block_composition(part_hs6, hs_map), P("blocks", "block_composition.csv"))
        _csv(sectors.row_labels.rename("sector").reset_index().assign(
            tie=sectors.ties.to_numpy()), P("blocks", "firm_sectors.csv"))
        blocks_info = {
            "modularity": float(part.modularity), "n_blocks": int(part.n_blocks),
            "converged": bool(part.converged), "resolution": part.resolution,
            "graph": {"rows": int(graph.A.shape[0]), "cols": int(graph.A.shape[1]),
                      "edges": int(graph.m)},
            "scan": part.scan, "history": list(part.history),
            "n_sector_ties": int(sectors.ties.sum()),
        }
        _json(blocks_info, P("blocks", "blocks_summary.json"))
    man["blocks"] = {k: blocks_info[k] for k in ("modularity", "n_blocks", "converged",
                                                 "graph", "n_sector_ties")}
    man["stages_run"].append("blocks")
    report.results["partition"] = part
    if stop_after == "blocks":
        return _finish(man, d, report)

    with _stage("indicators", warn_log):
        prod = product_level(persistent, world, gdp, ex_years, cfg.indicators)
        _csv(prod.scores.frame.reset_index(), P("indicators", "product_scores.csv"))
        _csv(pd.DataFrame({"hs6": prod.fitness.complexity.index,
                           "Q_raw": prod.fitness.complexity.to_numpy(),
                           "logQ_z": prod.complexity_z.to_numpy()}),
             P("indicators", "complexity.csv"))
        n_sim = _stored_entries(prod.similarity)
        sim_written = n_sim <= cfg.similarity_csv_max
        if sim_written:
            _csv(prod.similarity.to_frame(), P("indicators", "similarity.csv"))
        else:
            logger.info("similarity has %d stored entries; triplet file skipped", n_sim)
        years = range(max(ex_years[0], t - w + 1), min(ex_years[1], t) + 1)
        tables = yearly_indicators(persistent, years, prod, part_hs6, sectors, cfg.indicators)
        long = indicators_long(tables)
        _csv(long, P("indicators", "firm_year_indicators.csv"))
        _csv(long[["firm_id", "year", "expy", "expy_coverage"]].dropna(subset=["expy"]).rename(
            columns={"expy_coverage": "coverage"}), P("indicators", "expy.csv"))
        coh = long[["firm_id", "year", "coherence", "coherence_degenerate"]].dropna(
            subset=["coherence"])
        coh = coh.assign(degenerate=coh.pop("coherence_degenerate").astype(bool))
        _csv(coh, P("indicators", "coherence.csv"))
        var_panel = VariablePanel(revenue=fin.wide("operating_revenue"),
                                  ppe=profit_per_employee(fin, w),
                                  covariates={k: tables[k] for k in YEARLY_INDICATORS})
        variables = firm_variables(var_panel, cfg, sectors.row_labels)
        _csv(variables.reset_index(), P("indicators", "firm_variables.csv"))
        ind_info = {
            "n_products_scored": int(len(prod.scores.frame)),
            "logprody_mean": prod.scores.mean, "logprody_std": prod.scores.std,
            "fitness": {"n_iter": prod.fitness.n_iter, "residual": _finite(prod.fitness.residual),
                        "converged": prod.fitness.converged},
            "prody_complexity_pearson": _finite(prod.prody_complexity_r),
            "prody_complexity_n": prod.n_prody_complexity,
            "similarity_undefined_entries": prod.similarity.n_undefined,
            "similarity_eps": prod.similarity.eps,
            "similarity_entries": n_sim,
            "similarity_csv_written": sim_written,
            "indicator_years": [int(y) for y in years],
        }
        _json(ind_info, P("indicators", "indicators_summary.json"))
    man["indicators"] = ind_info
    man["stages_run"].append("indicators")
    if stop_after == "indicators":
        return _finish(man, d, report)

    with _stage("regress", warn_log):
        specs = model_specs(cfg)
        results = {}
        for mid, table, label, spec in specs:
            design = assemble_design(var_panel, spec, sectors.row_labels)
            results[mid] = fit_design(design)
        for table in ("table1", "table2", "table3"):
            chosen = [(mid, label) for mid, tb, label, _ in specs if tb == table]
            text = regression_table([results[m] for m, _ in chosen], [lab for _, lab in chosen])
            os.makedirs(P("regress"), exist_ok=True)
            with open(P("regress", f"{table}.txt"), "w") as fh:
                fh.write(text)
        ids = [mid for mid, *_ in specs]
        _csv(results_frame([results[m] for m in ids], ids), P("regress", "coefficients.csv"))
        _csv(model_summary_frame([results[m] for m in ids], ids,
                                 [label for _, _, label, _ in specs]),
             P("regress", "models.csv"))
    man["regressions"] = {m: {"nobs": r.nobs, "dropped": r.dropped,
                              "reference_sector": r.reference_sector}
                          for m, r in results.items()}
    man["stages_run"].append("regress")
    report.results["regressions"] = results
    if stop_after == "regress":
        return _finish(man, d, report)

    with _stage("figures", warn_log):
        fig = {}
        v = variables
        sel = v[["expy", "revenue", "G"]].dropna()
        sel = sel[sel["revenue"] > 0]
        if len(sel):
            grid = emit_heatmap(sel["expy"], np.log(sel["revenue"]), sel["G"],
                                bins=cfg.heatmap_bins, sigma=cfg.heatmap_sigma)
            _csv(grid.to_frame(), P("figures", "heatmap_expy_revenue.csv"))
            fig["heatmap_expy_revenue"] = {"points": int(len(sel)),
                                           "occupied": int((grid.count > 0).sum())}
            if cfg.render_png:
                render_heatmap(grid, P("figures", "heatmap_expy_revenue.png"), "EXPY",
                               "log Operative Revenue", "Growth")
        sel = v[["d_in", "d_out", "G"]].dropna()
        if len(sel):
            grid = emit_heatmap(sel["d_in"], sel["d_out"], sel["G"], bins=cfg.heatmap_bins,
                                sigma=cfg.heatmap_sigma)
            _csv(grid.to_frame(), P("figures", "heatmap_din_dout.csv"))
            fig["heatmap_din_dout"] = {"points": int(len(sel)),
                                       "occupied": int((grid.count > 0).sum())}
            if cfg.render_png:
                render_heatmap(grid, P("figures", "heatmap_din_dout.png"),
                               "In-block Diversification", "Out-of-block Diversification",
                               "Growth")
        sel = v[["d_total", "d_in", "G"]].dropna()
        zero_in = int((sel["d_in"] <= 0).sum())
        sel = sel[sel["d_in"] > 0]
        curve = emit_nonparametric_curve(np.log(sel["d_total"] / sel["d_in"]), sel["G"],
                                         bandwidth=cfg.curve_bandwidth,
                                         n_grid=cfg.curve_points)
        _csv(curve.to_frame(), P("figures", "curve_growth_diversification_ratio.csv"))
        fig["curve"] = {"points": curve.n_points, "bandwidth": curve.bandwidth,
                        "excluded_zero_in_block": zero_in, "kernel": "gaussian",
                        "bandwidth_rule": "silverman" if cfg.curve_bandwidth is None
                        else "fixed"}
    man["figures"] = fig
    man["stages_run"].append("figures")
    return _finish(man, d, report)


def _stored_entries(sim):
    v = sim.values
    return int(v.nnz) if hasattr(v, "nnz") else int(np.count_nonzero(v))


def _lib_versions():
    import scipy
    import sklearn
    return {"scipy": scipy.__version__, "scikit-learn": sklearn.__version__}


def _finish(man, d, report):
    outputs = {}
    for root, _, files in os.walk(d):
        for f in files:
            full = os.path.join(root, f)
            outputs[os.path.relpath(full, d).replace(os.sep, "/")] = sha256_file(full)
    man["outputs"] = dict(sorted(outputs.items()))
    _json(man, os.path.join(d, "manifest.json"))
    report.manifest = man
    report.stages = list(man["stages_run"])
    return report
