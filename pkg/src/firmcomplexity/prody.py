"""Product income scores (logPRODY) and firm-level EXPY."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd
import scipy.sparse as sp
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_1d_finite, check_nonnegative_matrix
from .exceptions import ComputeError, ValidationError
from .matrix import _rca_values

WEIGHT_MODES = ("volume", "rca")


@dataclass(frozen=True, eq=False)
class ProductScoreTable:
    """Per-product raw score and (after :func:`zscore`) its z-score."""

    frame: pd.DataFrame
    mean: float | None = None
    std: float | None = None

    @property
    def raw(self):
        return self.frame["logprody_raw"]

    @property
    def z(self):
        return self.frame["logprody_z"]


@dataclass(frozen=True, eq=False)
class ExpyTable:
    frame: pd.DataFrame
    mode: str = "volume"

    @property
    def expy(self):
        return self.frame["expy"]


def _log_prody_values(R, log_gdp):
    mass = np.asarray(R.sum(axis=0)).ravel()
    weighted = np.asarray(R.T @ log_gdp).ravel()
    with np.errstate(divide="ignore", invalid="ignore"):
        return weighted / mass, mass > 0


def _weighted_mean_rows(W, scores):
    """Row-wise mean of ``scores`` weighted by W, over columns with a finite score."""
    defined = np.isfinite(scores)
    s = np.where(defined, scores, 0.0)
    W = sp.csr_matrix(W)
    num = np.asarray(W @ s).ravel()
    den = np.asarray(W @ defined.astype(np.float64)).ravel()
    total = np.asarray(W.sum(axis=1)).ravel()
    with np.errstate(divide="ignore", invalid="ignore"):
        mean = num / den
        coverage = den / total
    mean[den <= 0] = np.nan
    return mean, coverage


def log_prody(country_rca, gdp):
    """RCA-weighted mean log GDP per capita of each product's exporters.

    ``gdp`` is a :class:`~firmcomplexity.ingest.GdpTable`; every country row
    of ``country_rca`` needs an entry. Products with no RCA mass are
    excluded with a warning.
    """
    log_gdp = gdp.log_gdp(country_rca.rows)
    values, ok = _log_prody_values(country_rca.values, log_gdp)
    if not ok.all():
        warnings.warn(f"{int((~ok).sum())} products have zero RCA mass; logPRODY undefined",
                      stacklevel=2)
    frame = pd.DataFrame({"logprody_raw": values[ok]},
                         index=pd.Index(country_rca.cols[ok], name="hs6"))
    return ProductScoreTable(frame=frame)


def zscore(table):
    """Standardize raw scores (population standard deviation)."""
    x = table.raw.to_numpy(dtype=np.float64)
    if len(x) < 2:
        raise ComputeError("z-score needs at least two products")
    mean = float(x.mean())
    std = float(x.std(ddof=0))
    if not std > 0:
        raise ComputeError("z-score undefined: all product scores are equal")
    frame = table.frame.assign(logprody_z=(x - mean) / std)
    return ProductScoreTable(frame=frame, mean=mean, std=std)


def expy(firm_exports, scores, mode="volume"):
    """Weighted mean of z-scored logPRODY over each firm's products.

    Weights are export volumes (``mode="volume"``) or the firm-level RCA of
    ``firm_exports`` (``mode="rca"``). Products without a score are left out
    of numerator and denominator; ``coverage`` is the weight share kept.
    Firms with no scored weight are dropped with a warning.
    """
    if mode not in WEIGHT_MODES:
        raise ValidationError(f"mode must be one of {WEIGHT_MODES}")
    if scores.frame.get("logprody_z") is None:
        raise ValidationError("scores must be z-scored first")
    z = scores.z.reindex(pd.Index(firm_exports.cols)).to_numpy(dtype=np.float64)
    W = firm_exports.values
    if mode == "rca":
        W = _rca_values(W)
    mean, coverage = _weighted_mean_rows(W, z)
    keep = np.isfinite(mean)
    if not keep.all():
        warnings.warn(f"{int((~keep).sum())} firms have no scored exports; EXPY dropped",
                      stacklevel=2)
    frame = pd.DataFrame({"expy": mean[keep], "coverage": coverage[keep]},
                         index=pd.Index(firm_exports.rows[keep], name="firm_id"))
    return ExpyTable(frame=frame, mode=mode)


class ProdyEXPY(TransformerMixin, BaseEstimator):
    """Learn product scores from country trade, then score export baskets.

    ``fit(X, log_gdp)`` takes a country x product export matrix and the log
    GDP per capita of each country row. ``transform`` maps a firm x product
    matrix with the same columns to a one-column EXPY array.

    Attributes
    ----------
    logprody_ : ndarray of shape (n_products,)
        Raw scores, NaN where a product has no RCA mass.
    mean_, scale_ : float
        Normalization constants of the z-score.
    zscores_ : ndarray of shape (n_products,)
    """

    def __init__(self, weights="volume"):
        self.weights = weights

    def fit(self, X, y):
        X = check_nonnegative_matrix(X)
        log_gdp = check_1d_finite(y, "log_gdp")
        if log_gdp.shape[0] != X.shape[0]:
            raise ValidationError("one log GDP value per country row is required")
        raw, ok = _log_prody_values(_rca_values(X), log_gdp)
        raw[~ok] = np.nan
        vals = raw[ok]
        if vals.size < 2 or not vals.std() > 0:
            raise ComputeError("z-score undefined: need two or more distinct product scores")
        self.logprody_ = raw
        self.mean_ = float(vals.mean())
        self.scale_ = float(vals.std())
        self.zscores_ = (raw - self.mean_) / self.scale_
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "zscores_")
        if self.weights not in WEIGHT_MODES:
            raise ValidationError(f"weights must be one of {WEIGHT_MODES}")
        X = check_nonnegative_matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise ValidationError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        W = _rca_values(X) if self.weights == "rca" else X
        mean, _ = _weighted_mean_rows(W, self.zscores_)
        return mean.reshape(-1, 1)
