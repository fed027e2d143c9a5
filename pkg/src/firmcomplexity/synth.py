"""Synthetic economies with planted blocks, product income gradients and growth laws."""

from __future__ import annotations

import configparser
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import pandas as pd
import scipy.sparse as sp

from .blocks import BipartiteGraph, BlockPartition, _best_response
from .econometrics import DEPENDENTS, LOG_VARIABLES
from .exceptions import ValidationError
from .indicators import (IndicatorSettings, aggregate_binary, product_level, sectors_of,
                         yearly_indicators)
from .ingest import (N_SECTIONS, ExportPanel, FinancialPanel, GdpTable, WorldTrade, _build_panel,
                     filter_persistent_firms, make_hs_map, write_exports, write_financials,
                     write_gdp, write_hs_map, write_world_trade)

logger = logging.getLogger(__name__)

COVARIATES = ("revenue", "coherence", "expy", "d_out", "d_in")

DEFAULT_BETA_GROWTH = {"revenue": 0.039, "coherence": 0.012, "expy": 0.05,
                       "d_out": 0.016, "d_in": -0.014}
DEFAULT_BETA_PPE = {"revenue": 0.352, "coherence": 0.118, "expy": 0.153,
                    "d_out": 0.023, "d_in": -0.003}


@dataclass
class SynthConfig:
    """Parameters of a synthetic economy.

    Products are HS6 codes grouped ``products_per_heading`` to a 4-digit
    heading. Headings are split into ``n_blocks`` contiguous blocks (sizes
    from ``block_sizes`` or as equal as possible) and into the 21 HS sections.
    Every firm belongs to one block and holds each product of its block with
    probability ``p_in`` and any other product with probability ``p_out``.
    """

    n_firms: int = 2000
    n_products: int = 420
    products_per_heading: int = 3
    n_blocks: int = 7
    block_sizes: tuple | None = None
    p_in: float = 0.15
    p_out: float = 0.01
    activity: float = 0.85
    value_mu: float = 10.0
    value_sigma: float = 1.0
    firm_scale_sigma: float = 1.0
    transient_share: float = 0.05
    export_years: tuple = (2008, 2017)
    financial_years: tuple = (2013, 2019)
    t_star: int = 2015
    dt: int = 4
    n_countries: int = 60
    log_gdp_range: tuple = (7.0, 11.0)
    prody_gradient: float = 1.5
    product_noise: float = 1.0
    country_noise: float = 0.5
    beta_growth: dict = field(default_factory=lambda: dict(DEFAULT_BETA_GROWTH))
    beta_ppe: dict = field(default_factory=lambda: dict(DEFAULT_BETA_PPE))
    intercept_growth: float = 0.0
    intercept_ppe: float = 0.0
    sector_effect_sd: float = 0.02
    noise_growth: float = 0.15
    noise_ppe: float = 0.5
    log_revenue_mean: float = 15.0
    log_revenue_sd: float = 1.5
    financial_coverage: float = 0.9
    seed: int = 0

    def __post_init__(self):
        self.export_years = tuple(int(y) for y in self.export_years)
        self.financial_years = tuple(int(y) for y in self.financial_years)
        self.log_gdp_range = tuple(float(v) for v in self.log_gdp_range)
        if self.block_sizes is not None:
            self.block_sizes = tuple(int(b) for b in self.block_sizes)
        self.validate()

    @classmethod
    def full_scale(cls, **overrides):
        """Magnitudes of the full firm panel; sparse baskets keep the record count tractable."""
        params = dict(n_firms=12852, n_products=5203, products_per_heading=4, n_blocks=7,
                      p_in=0.03, p_out=0.001, export_years=(1993, 2017))
        params.update(overrides)
        return cls(**params)

    @property
    def n_headings(self):
        return -(-self.n_products // self.products_per_heading)

    def validate(self):
        for name in ("p_in", "p_out", "activity", "transient_share", "financial_coverage"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1], got {v}")
        if self.p_in <= 0:
            raise ValidationError("p_in must be positive")
        if self.n_firms < self.n_blocks or self.n_blocks < 1:
            raise ValidationError("need at least one firm per block")
        if self.products_per_heading < 1 or self.products_per_heading > 99:
            raise ValidationError("products_per_heading must lie in 1..99")
        if self.n_headings < max(N_SECTIONS, self.n_blocks):
            raise ValidationError(f"{self.n_headings} headings cannot cover {N_SECTIONS} sections "
                                  f"and {self.n_blocks} blocks")
        if self.n_headings > 99 * 99:
            raise ValidationError("too many headings for 4-digit codes")
        if self.block_sizes is not None:
            if len(self.block_sizes) != self.n_blocks or min(self.block_sizes) < 1:
                raise ValidationError("block_sizes needs one positive heading count per block")
            if sum(self.block_sizes) != self.n_headings:
                raise ValidationError(f"block_sizes sum to {sum(self.block_sizes)}, "
                                      f"expected {self.n_headings} headings")
        for name in ("beta_growth", "beta_ppe"):
            beta = getattr(self, name)
            if set(beta) != set(COVARIATES):
                raise ValidationError(f"{name} must have exactly the keys {COVARIATES}")
        e0, e1 = self.export_years
        f0, f1 = self.financial_years
        t, dt = self.t_star, self.dt
        if not (e0 <= t - 2 and t <= e1):
            raise ValidationError("export years must cover t_star - 2 .. t_star")
        if not (f0 <= t - 2 and t + dt <= f1):
            raise ValidationError("financial years must cover t_star - 2 .. t_star + dt")
        if self.dt < 1:
            raise ValidationError("dt must be positive")

    def to_dict(self):
        out = asdict(self)
        for k, v in out.items():
            if isinstance(v, tuple):
                out[k] = list(v)
        return out

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValidationError(f"unknown synth parameters: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True, eq=False)
class SyntheticEconomy:
    exports: ExportPanel
    financials: FinancialPanel
    gdp: GdpTable
    hs_map: object
    world_trade: WorldTrade
    truth: dict
    covariates: pd.DataFrame
    basket: sp.csr_matrix
    firm_block: np.ndarray
    product_block: np.ndarray
    config: SynthConfig


# ---------------------------------------------------------------------------
# planted bipartite graphs


def planted_bipartite(n_rows, n_cols, n_blocks, p_in, p_out, seed=0):
    """Stochastic block graph with equal-as-possible contiguous blocks.

    Returns (A as CSR int8, row labels, column labels).
    """
    if not (0 <= p_out <= 1 and 0 <= p_in <= 1):
        raise ValidationError("probabilities must lie in [0, 1]")
    if n_blocks < 1 or n_blocks > min(n_rows, n_cols):
        raise ValidationError("need 1 <= n_blocks <= min(n_rows, n_cols)")
    rng = np.random.default_rng(seed)
    lr = (np.arange(n_rows) * n_blocks) // n_rows
    lc = (np.arange(n_cols) * n_blocks) // n_cols
    P = np.where(lr[:, None] == lc[None, :], p_in, p_out)
    A = (rng.random((n_rows, n_cols)) < P).astype(np.int8)
    return sp.csr_matrix(A), lr, lc


def expected_planted_modularity(row_sizes, col_sizes, p_in, p_out):
    """Modularity of the planted labels with edge counts replaced by expectations."""
    r = np.asarray(row_sizes, dtype=np.float64)
    c = np.asarray(col_sizes, dtype=np.float64)
    R, C = r.sum(), c.sum()
    m_in = p_in * float(r @ c)
    m = m_in + p_out * (R * C - float(r @ c))
    # expected degree sums of block b on each side
    Kr = r * (p_in * c + p_out * (C - c))
    Kc = c * (p_in * r + p_out * (R - r))
    return m_in / m - float(Kr @ Kc) / m ** 2


# ---------------------------------------------------------------------------
# generation


def _heading_codes(n_headings):
    h = np.arange(n_headings)
    return np.array([f"{c:02d}{k:02d}" for c, k in zip(h // 99 + 1, h % 99 + 1)], dtype=object)


def _block_of_heading(cfg):
    H = cfg.n_headings
    if cfg.block_sizes is None:
        return (np.arange(H) * cfg.n_blocks) // H
    return np.repeat(np.arange(cfg.n_blocks), cfg.block_sizes)


def _build_hs_map(cfg):
    H, k = cfg.n_headings, cfg.products_per_heading
    hs4 = _heading_codes(H)
    heading = np.arange(cfg.n_products) // k
    within = np.arange(cfg.n_products) % k
    hs6 = np.array([f"{hs4[h]}{j + 1:02d}" for h, j in zip(heading, within)], dtype=object)
    section = (heading * N_SECTIONS) // H + 1
    frame = pd.DataFrame({"hs6": hs6, "hs4": hs4[heading], "section_index": section,
                          "section_label": [f"Section {s}" for s in section]})
    return make_hs_map(frame, source="synthetic"), heading


def _draw_baskets(cfg, rng, firm_block, product_block):
    """Firm x product holdings; every firm keeps at least one product of its block."""
    rows = []
    chunk = max(1, 2_000_000 // cfg.n_products)
    for start in range(0, cfg.n_firms, chunk):
        fb = firm_block[start:start + chunk]
        same = fb[:, None] == product_block[None, :]
        draw = rng.random(same.shape) < np.where(same, cfg.p_in, cfg.p_out)
        empty = ~(draw & same).any(axis=1)
        for i in np.flatnonzero(empty):
            own = np.flatnonzero(same[i])
            draw[i, own[rng.integers(len(own))]] = True
        rows.append(sp.csr_matrix(draw, dtype=np.int8))
    return sp.vstack(rows, format="csr")


def _draw_exports(cfg, rng, basket, products):
    """Yearly records: each held product is active with probability ``activity``."""
    e0, e1 = cfg.export_years
    years = np.arange(e0, e1 + 1)
    n_years = len(years)
    coo = basket.tocoo()
    firm, prod = coo.row.astype(np.int64), coo.col.astype(np.int64)
    firm_scale = rng.normal(0.0, cfg.firm_scale_sigma, cfg.n_firms)
    transient = rng.random(cfg.n_firms) < cfg.transient_share
    gap_year = rng.integers(n_years, size=cfg.n_firms)

    F = np.repeat(firm, n_years)
    P = np.repeat(prod, n_years)
    Y = np.tile(np.arange(n_years), len(firm))
    active = rng.random(len(F)) < cfg.activity
    # force one active product per firm-year so only transient firms have gaps
    fy = F * n_years + Y
    order = rng.permutation(len(F))
    first = np.zeros(len(F), dtype=bool)
    _, idx = np.unique(fy[order], return_index=True)
    first[order[idx]] = True
    active |= first
    active &= ~(transient[F] & (Y == gap_year[F]))
    F, P, Y = F[active], P[active], Y[active]
    value = np.exp(cfg.value_mu + firm_scale[F] + rng.normal(0.0, cfg.value_sigma, len(F)))
    value = np.round(value, 2)
    firm_ids = np.array([f"F{i:06d}" for i in range(cfg.n_firms)], dtype=object)
    return _build_panel(firm_ids[F], products[P], years[Y].astype(np.int64), value)


def _draw_world(cfg, rng, product_block, products):
    """Country x product values where high-offset blocks are exported by rich countries."""
    lo, hi = cfg.log_gdp_range
    log_gdp = np.sort(rng.uniform(lo, hi, cfg.n_countries))
    z = (log_gdp - log_gdp.mean()) / log_gdp.std()
    offsets = np.linspace(-1.0, 1.0, cfg.n_blocks)
    u = offsets[product_block] + rng.normal(0.0, cfg.product_noise, len(product_block))
    mu = rng.normal(0.0, 1.0, cfg.n_countries)
    logE = (mu[:, None] + cfg.prody_gradient * z[:, None] * u[None, :]
            + rng.normal(0.0, cfg.country_noise, (cfg.n_countries, len(u))))
    countries = np.array([f"C{i:03d}" for i in range(cfg.n_countries)], dtype=object)
    values = np.round(np.exp(logE + 10.0), 2)
    frame = pd.DataFrame({"country": np.repeat(countries, len(u)),
                          "hs6": np.tile(products, cfg.n_countries),
                          "value": values.ravel()})
    gdp = GdpTable(gdp_pc=pd.Series(np.round(np.exp(log_gdp), 2), index=pd.Index(countries,
                                                                                 name="country"),
                                    name="gdp_pc"))
    return WorldTrade(frame=frame), gdp, u


def _truth_covariates(cfg, panel, hs_map, world, gdp, firm_block, product_block, products):
    """Firm covariates at t* computed with the planted partition."""
    settings = IndicatorSettings()
    years = cfg.export_years
    persistent = filter_persistent_firms(panel, years)
    prod = product_level(persistent, world, gdp, years, settings)
    sectors = sectors_of(persistent, hs_map, years)
    effective = _effective_firm_blocks(cfg, persistent, hs_map, firm_block)
    planted = BlockPartition(
        row_labels=effective,
        col_labels=pd.Series(product_block, index=pd.Index(products)),
        n_blocks=cfg.n_blocks, kind="planted", resolution="HS6")
    t = cfg.t_star
    tables = yearly_indicators(persistent, range(t - 2, t + 1), prod, planted, sectors, settings)
    X = pd.DataFrame({name: tables[name].reindex(columns=range(t - 2, t + 1)).mean(axis=1,
                                                                                  skipna=False)
                      for name in ("coherence", "expy", "d_out", "d_in")})
    sector = sectors.row_labels.reindex(X.index)
    return X, sector, effective


def _effective_firm_blocks(cfg, persistent, hs_map, firm_block):
    """Firm labels that maximize modularity given the planted product blocks.

    A firm whose significant exports happen to sit mostly outside its own
    block is reassigned, as any modularity maximizer would; ties keep the
    planted label. Firms without any significant export get the residual
    label -1.
    """
    binary = aggregate_binary(persistent, cfg.export_years, "HS4", hs_map, 1.0)
    graph = BipartiteGraph.from_binary(binary)
    heading_block = pd.Series(_block_of_heading(cfg), index=_heading_codes(cfg.n_headings))
    lc = heading_block.reindex(pd.Index(graph.cols)).to_numpy(dtype=np.int64)
    codes = np.array([int(f[1:]) for f in graph.rows])
    A = graph.A.astype(np.float64)
    labels, _ = _best_response(A, graph.row_degree, graph.col_degree, graph.m, lc, cfg.n_blocks,
                               firm_block[codes])
    labels = np.where(graph.row_degree > 0, labels, -1)
    out = pd.Series(labels, index=pd.Index(graph.rows, name="firm_id"), name="block")
    return out.reindex(pd.Index(persistent.firm_ids)).fillna(-1).astype(np.int64)


def _term_values(X):
    out = pd.DataFrame(index=X.index)
    for name in COVARIATES:
        v = X[name]
        if name in LOG_VARIABLES:
            v = np.log(v.where(v > 0))
        out[name] = v
    return out


def generate(config=None, **overrides):
    """Draw a synthetic economy; deterministic for a given configuration."""
    cfg = config if config is not None else SynthConfig(**overrides)
    if config is not None and overrides:
        cfg = SynthConfig.from_dict({**cfg.to_dict(), **overrides})
    ss = np.random.SeedSequence(cfg.seed)
    r_basket, r_exports, r_world, r_fin, r_noise = (np.random.default_rng(s)
                                                     for s in ss.spawn(5))

    hs_map, heading = _build_hs_map(cfg)
    products = hs_map.hs6
    product_block = _block_of_heading(cfg)[heading]
    firm_block = r_basket.integers(cfg.n_blocks, size=cfg.n_firms)
    firm_block[:cfg.n_blocks] = np.arange(cfg.n_blocks)
    basket = _draw_baskets(cfg, r_basket, firm_block, product_block)
    panel = _draw_exports(cfg, r_exports, basket, products)
    world, gdp, u = _draw_world(cfg, r_world, product_block, products)

    X, sector, effective = _truth_covariates(cfg, panel, hs_map, world, gdp, firm_block,
                                             product_block, products)
    firm_ids = np.array([f"F{i:06d}" for i in range(cfg.n_firms)], dtype=object)
    s = pd.Series(r_fin.normal(cfg.log_revenue_mean, cfg.log_revenue_sd, cfg.n_firms),
                  index=firm_ids)
    X = X.reindex(firm_ids)
    X["revenue"] = np.exp(s)
    terms = _term_values(X)
    sector = sector.reindex(firm_ids)
    sections = np.arange(1, N_SECTIONS + 1)
    gamma_g = pd.Series(r_noise.normal(0.0, cfg.sector_effect_sd, N_SECTIONS), index=sections)
    gamma_p = pd.Series(r_noise.normal(0.0, cfg.sector_effect_sd, N_SECTIONS), index=sections)
    eps_g = r_noise.normal(0.0, cfg.noise_growth, cfg.n_firms)
    eps_p = r_noise.normal(0.0, cfg.noise_ppe, cfg.n_firms)

    def linear(beta, intercept, gamma, eps):
        lin = intercept + sum(beta[k] * terms[k].fillna(0.0) for k in COVARIATES)
        return lin + gamma.reindex(sector.fillna(1).astype(int)).to_numpy() + eps

    G = linear(cfg.beta_growth, cfg.intercept_growth, gamma_g, eps_g).to_numpy()
    y_ppe = linear(cfg.beta_ppe, cfg.intercept_ppe, gamma_p, eps_p).to_numpy()

    # revenue path whose backward 3-year mean is exp(s) at t* and grows by G over dt
    g = G / cfg.dt
    a = s.to_numpy() - np.log((1 + np.exp(-g) + np.exp(-2 * g)) / 3)
    f0, f1 = cfg.financial_years
    fyears = np.arange(f0, f1 + 1)
    revenue = np.exp(a[:, None] + g[:, None] * (fyears[None, :] - cfg.t_star))
    employees = np.maximum(1, np.round(np.exp(s.to_numpy() - 11.0))).astype(np.int64)
    ratio = np.sign(y_ppe) * np.expm1(np.abs(y_ppe))
    net = ratio * employees
    covered = r_fin.random(cfg.n_firms) < cfg.financial_coverage
    n_years = len(fyears)
    fin = pd.DataFrame({
        "firm_id": np.repeat(firm_ids[covered], n_years),
        "year": np.tile(fyears, int(covered.sum())),
        "employees": np.repeat(employees[covered], n_years),
        "operating_revenue": revenue[covered].ravel(),
        "net_income": np.repeat(net[covered], n_years),
    })
    fin["operating_revenue"] = fin["operating_revenue"].round(6)
    fin["net_income"] = fin["net_income"].round(6)
    financials = FinancialPanel(frame=fin)

    cov_frame = terms.rename(columns=lambda c: f"log_{c}" if c in LOG_VARIABLES else c)
    cov_frame.insert(0, "sector", sector)
    cov_frame["G"] = G
    cov_frame["profit_per_employee"] = y_ppe
    cov_frame["block"] = firm_block
    cov_frame["effective_block"] = effective.reindex(firm_ids).fillna(-1).astype(np.int64)
    cov_frame["has_financials"] = covered
    cov_frame.index.name = "firm_id"

    truth = {
        "seed": cfg.seed,
        "t_star": cfg.t_star,
        "dt": cfg.dt,
        "n_blocks": cfg.n_blocks,
        "beta": {"growth": {_term(k): v for k, v in cfg.beta_growth.items()},
                 "profit_per_employee": {_term(k): v for k, v in cfg.beta_ppe.items()}},
        "intercept": {"growth": cfg.intercept_growth,
                      "profit_per_employee": cfg.intercept_ppe},
        "sector_effects": {"growth": {int(k): float(v) for k, v in gamma_g.items()},
                           "profit_per_employee": {int(k): float(v) for k, v in gamma_p.items()}},
        "noise": {"growth": cfg.noise_growth, "profit_per_employee": cfg.noise_ppe},
        "expected_modularity": expected_planted_modularity(
            np.bincount(firm_block, minlength=cfg.n_blocks),
            np.bincount(product_block, minlength=cfg.n_blocks), cfg.p_in, cfg.p_out),
        "firm_blocks": dict(zip(firm_ids.tolist(), firm_block.tolist())),
        "heading_blocks": dict(zip(_heading_codes(cfg.n_headings).tolist(),
                                   _block_of_heading(cfg).tolist())),
        "product_latent": dict(zip(products.tolist(), np.round(u, 12).tolist())),
    }
    assert set(truth["beta"]) == set(DEPENDENTS)
    return SyntheticEconomy(exports=panel, financials=financials, gdp=gdp, hs_map=hs_map,
                            world_trade=world, truth=truth, covariates=cov_frame, basket=basket,
                            firm_block=firm_block, product_block=product_block, config=cfg)


def _term(name):
    return f"log_{name}" if name in LOG_VARIABLES else name


# ---------------------------------------------------------------------------
# output

DATASET_FILES = {
    "exports": "exports.csv",
    "financials": "financials.csv",
    "gdp": "gdp.csv",
    "hs_map": "hs_map.csv",
    "world_trade": "world_trade.csv",
}


def write_dataset(economy, directory):
    """Write the input tables, the truth record and a ready-to-run config."""
    os.makedirs(directory, exist_ok=True)
    p = {k: os.path.join(directory, v) for k, v in DATASET_FILES.items()}
    write_exports(economy.exports, p["exports"])
    write_financials(economy.financials, p["financials"])
    write_gdp(economy.gdp, p["gdp"])
    write_hs_map(economy.hs_map, p["hs_map"])
    write_world_trade(economy.world_trade, p["world_trade"])
    with open(os.path.join(directory, "truth.json"), "w") as fh:
        json.dump(economy.truth, fh, indent=1, sort_keys=True)
        fh.write("\n")
    economy.covariates.to_csv(os.path.join(directory, "truth_covariates.csv"))
    cfg = economy.config
    ini = configparser.ConfigParser()
    ini["inputs"] = dict(DATASET_FILES)
    ini["years"] = {"export_start": str(cfg.export_years[0]),
                    "export_end": str(cfg.export_years[1]),
                    "financial_start": str(cfg.financial_years[0]),
                    "financial_end": str(cfg.financial_years[1]),
                    "t_star": str(cfg.t_star), "dt": str(cfg.dt)}
    ini["blocks"] = {"seed": str(cfg.seed)}
    ini["output"] = {"directory": "results"}
    with open(os.path.join(directory, "config.ini"), "w") as fh:
        ini.write(fh)
    with open(os.path.join(directory, "synth_config.json"), "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")
    return p
