"""Firm-level indicator construction shared by the pipeline and the generator."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd

from .blocks import (BipartiteGraph, block_diversification, brim, map_blocks_hs4_to_hs6,
                     sector_partition)
from .fitness import complexity_scores, fitness_complexity, pearson
from .matrix import aggregate_years, binarize, matrix_from_frame, rca, year_matrix
from .prody import _weighted_mean_rows, expy, log_prody, zscore
from .relatedness import coherence, cooccurrence, sapling

logger = logging.getLogger(__name__)

YEARLY_INDICATORS = ("expy", "coherence", "d_in", "d_out", "d_total", "d_in_section",
                     "d_out_section", "avg_complexity")
# per-year diagnostics that are emitted but never enter a regression
AUXILIARY = ("expy_coverage", "coherence_degenerate")


@dataclass(frozen=True)
class IndicatorSettings:
    rca_threshold: float = 1.0
    expy_weights: str = "volume"
    similarity_eps: float = 0.0
    fitness_tol: float = 1e-8
    fitness_max_iter: int = 1000
    complexity_transform: str = "log"


@dataclass(frozen=True, eq=False)
class ProductLevel:
    scores: object              # ProductScoreTable (z-scored)
    fitness: object             # FitnessResult on the country matrix
    complexity_z: pd.Series
    similarity: object          # SimilarityMatrix over HS6 products
    prody_complexity_r: float
    n_prody_complexity: int


def aggregate_binary(panel, years, resolution, hs_map, threshold):
    return binarize(rca(aggregate_years(panel, years, resolution, hs_map)), threshold)


def detect_blocks(panel, hs_map, years, resolution="HS4", threshold=1.0, seed=0, restarts=32,
                  max_blocks=32, n_blocks=None, max_iter=200, n_jobs=1):
    """BRIM on the year-averaged, RCA-thresholded graph, mapped to HS6."""
    binary = aggregate_binary(panel, years, resolution, hs_map, threshold)
    graph = BipartiteGraph.from_binary(binary)
    part = brim(graph, seed=seed, max_blocks=max_blocks, restarts=restarts, n_blocks=n_blocks,
                max_iter=max_iter, n_jobs=n_jobs)
    if resolution == "HS6":
        part = replace(part, resolution="HS6")
    part_hs6 = map_blocks_hs4_to_hs6(part, hs_map, products=panel.products)
    logger.info("BRIM found %d blocks, Q=%.4f", part.n_blocks, part.modularity)
    return graph, part, part_hs6


def sectors_of(panel, hs_map, years):
    return sector_partition(aggregate_years(panel, years, "HS6"), hs_map)


def product_level(panel, world, gdp, years, settings):
    """Product scores from world trade and similarity from the firm graph."""
    W = matrix_from_frame(world.frame, row="country", col="hs6", meta={"kind": "world"})
    W_rca = rca(W)
    scores = zscore(log_prody(W_rca, gdp))
    fit = fitness_complexity(binarize(W_rca, settings.rca_threshold), tol=settings.fitness_tol,
                             max_iter=settings.fitness_max_iter)
    cz = complexity_scores(fit, settings.complexity_transform)
    common = scores.frame.index.intersection(fit.complexity.index)
    r = (pearson(scores.raw.reindex(common).to_numpy(), np.log(fit.complexity.reindex(common)))
         if len(common) >= 3 else float("nan"))
    binary = aggregate_binary(panel, years, "HS6", None, settings.rca_threshold)
    sim = sapling(cooccurrence(binary), eps=settings.similarity_eps)
    return ProductLevel(scores=scores, fitness=fit, complexity_z=cz, similarity=sim,
                        prody_complexity_r=float(r), n_prody_complexity=int(len(common)))


def yearly_indicators(panel, years, products, partition_hs6, sectors, settings):
    """Per-year firm indicators as ``{name: firm x year table}``.

    Keys are :data:`YEARLY_INDICATORS` plus the :data:`AUXILIARY` diagnostics.
    """
    columns = {name: {} for name in YEARLY_INDICATORS + AUXILIARY}
    for year in years:
        E = year_matrix(panel, year)
        if E.shape[0] == 0:
            continue
        ex = expy(E, products.scores, settings.expy_weights).frame
        coh = coherence(E, products.similarity).frame
        M = binarize(rca(E), settings.rca_threshold)
        div = block_diversification(M, partition_hs6)
        sec = block_diversification(M, sectors)
        ac = _weighted_scores(E, products.complexity_z)
        columns["expy"][year] = ex["expy"]
        columns["expy_coverage"][year] = ex["coverage"]
        columns["coherence"][year] = coh["coherence"]
        columns["coherence_degenerate"][year] = coh["degenerate"].astype(np.float64)
        columns["d_in"][year] = div["d_in"]
        columns["d_out"][year] = div["d_out"]
        columns["d_total"][year] = div["d_total"]
        columns["d_in_section"][year] = sec["d_in"]
        columns["d_out_section"][year] = sec["d_out"]
        columns["avg_complexity"][year] = ac
    out = {}
    for name, by_year in columns.items():
        frame = pd.DataFrame(by_year).sort_index()
        frame.index.name = "firm_id"
        frame.columns = frame.columns.astype(np.int64)
        out[name] = frame.astype(np.float64)
    return out


def _weighted_scores(E, z):
    s = z.reindex(pd.Index(E.cols)).to_numpy(dtype=np.float64)
    mean, _ = _weighted_mean_rows(E.values, s)
    keep = np.isfinite(mean)
    return pd.Series(mean[keep], index=pd.Index(E.rows[keep], name="firm_id"))


def indicators_long(tables):
    """Stack ``{name: firm x year}`` into a long frame (firm_id, year, columns...)."""
    parts = []
    for name, frame in tables.items():
        s = frame.stack(future_stack=True).rename(name)
        parts.append(s)
    long = pd.concat(parts, axis=1).sort_index()
    long.index.names = ["firm_id", "year"]
    return long.reset_index()
