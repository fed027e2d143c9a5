"""Weighted, RCA and binary bipartite matrices.

All matrices are sparse CSR with labelled rows (firms or countries) and
columns (HS6 or HS4 products). Structural zeros are never stored.
"""

from __future__ import annotations

import hashlib
import json
import os
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import pandas as pd
import scipy.sparse as sp
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_nonnegative_matrix
from .exceptions import ComputeError, ValidationError

RESOLUTIONS = ("HS6", "HS4")


@dataclass(frozen=True, eq=False)
class LabeledMatrix:
    values: sp.csr_matrix
    rows: np.ndarray
    cols: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.values.shape != (len(self.rows), len(self.cols)):
            raise ValidationError(
                f"matrix shape {self.values.shape} does not match labels "
                f"({len(self.rows)}, {len(self.cols)})")

    @property
    def shape(self):
        return self.values.shape

    @cached_property
    def row_totals(self):
        return np.asarray(self.values.sum(axis=1)).ravel()

    @cached_property
    def col_totals(self):
        return np.asarray(self.values.sum(axis=0)).ravel()

    @cached_property
    def total(self):
        return float(self.values.sum())

    def to_frame(self):
        coo = self.values.tocoo()
        return pd.DataFrame({"row": self.rows[coo.row], "col": self.cols[coo.col],
                             "value": coo.data})

    def toarray(self):
        return self.values.toarray()

    def select_rows(self, labels):
        """Rows ``labels`` in that order; unknown labels become empty rows."""
        pos = pd.Index(self.rows).get_indexer(labels)
        found = pos >= 0
        sel = sp.csr_matrix((len(labels), self.shape[1]), dtype=self.values.dtype)
        if found.any():
            picked = self.values[pos[found]]
            expand = sp.csr_matrix((np.ones(found.sum()), (np.flatnonzero(found),
                                                          np.arange(found.sum()))),
                                   shape=(len(labels), found.sum()))
            sel = sp.csr_matrix(expand @ picked)
        return type(self)(values=sel, rows=np.asarray(labels, dtype=object), cols=self.cols,
                          meta=dict(self.meta))


class ExportMatrix(LabeledMatrix):
    """Non-negative export values; ``meta`` records years and resolution."""


class RcaMatrix(LabeledMatrix):
    """Revealed comparative advantage values (>= 0)."""


class BinaryMatrix(LabeledMatrix):
    """0/1 matrix; ``meta['threshold']`` is the RCA cut it was built with."""


def _rca_values(E, product_share=None):
    """RCA of a CSR matrix. ``product_share`` defaults to E's column shares."""
    row_tot = np.asarray(E.sum(axis=1)).ravel()
    if product_share is None:
        col_tot = np.asarray(E.sum(axis=0)).ravel()
        product_share = col_tot / col_tot.sum()
    R = E.tocsr(copy=True)
    rows = np.repeat(np.arange(E.shape[0]), np.diff(R.indptr))
    with np.errstate(divide="ignore", invalid="ignore"):
        R.data = R.data / (row_tot[rows] * product_share[R.indices])
    R.data[~np.isfinite(R.data)] = 0.0
    R.eliminate_zeros()
    return R


def _binarize_values(R, threshold=1.0, rtol=1e-12):
    M = R.tocsr(copy=True)
    M.data = (M.data > threshold * (1.0 + rtol)).astype(np.int8)
    M.eliminate_zeros()
    return M


class RCA(TransformerMixin, BaseEstimator):
    """Revealed comparative advantage as a transformer.

    ``fit`` learns each product's share of total exports; ``transform``
    divides every row's product shares by those. With ``threshold`` set the
    output is the binary matrix ``RCA > threshold`` instead.

    Parameters
    ----------
    threshold : float or None, default=None
    rtol : float, default=1e-12
        Relative band around the threshold treated as equality, so that
        round-off on exactly-neutral cells (RCA = 1) does not flip them on.
    """

    def __init__(self, threshold=None, rtol=1e-12):
        self.threshold = threshold
        self.rtol = rtol

    def fit(self, X, y=None):
        X = check_nonnegative_matrix(X)
        col_tot = np.asarray(X.sum(axis=0)).ravel()
        total = col_tot.sum()
        if total <= 0:
            raise ComputeError("RCA undefined for an all-zero matrix")
        self.product_share_ = col_tot / total
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "product_share_")
        X = check_nonnegative_matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise ValidationError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        R = _rca_values(X, self.product_share_)
        if self.threshold is None:
            return R
        if self.threshold <= 0:
            raise ValidationError("threshold must be positive")
        return _binarize_values(R, self.threshold, self.rtol)


# ---------------------------------------------------------------------------
# labelled operations


def _hs4_columns(products, hs_map):
    return np.asarray(hs_map.hs4_of(products), dtype=object)


def year_matrix(panel, year, resolution="HS6", hs_map=None):
    """Export matrix of a single year."""
    return aggregate_years(panel, (year, year), resolution, hs_map)


def aggregate_years(panel, years, resolution="HS6", hs_map=None):
    """Mean yearly export value per (firm, product) over an inclusive range.

    Years without a record count as zero in the mean. With
    ``resolution="HS4"`` HS6 values are first summed within each 4-digit
    heading. Rows and columns without any value are omitted.
    """
    first, last = int(years[0]), int(years[1])
    if last < first:
        raise ValidationError(f"empty year range {years}")
    if resolution not in RESOLUTIONS:
        raise ValidationError(f"resolution must be one of {RESOLUTIONS}")
    n_years = last - first + 1
    mask = (panel.year >= first) & (panel.year <= last) & (panel.value > 0)
    firm, product, value = panel.firm[mask], panel.product[mask], panel.value[mask]
    col_labels = panel.products
    if resolution == "HS4":
        if hs_map is None:
            raise ValidationError("HS4 aggregation requires an HS map")
        hs4 = _hs4_columns(panel.products, hs_map)
        col_code, col_labels = pd.factorize(hs4, sort=True)
        product = col_code[product]
        col_labels = np.asarray(col_labels, dtype=object)
    rows_used = np.unique(firm)
    cols_used = np.unique(product)
    E = sp.csr_matrix((value / n_years, (np.searchsorted(rows_used, firm),
                                         np.searchsorted(cols_used, product))),
                      shape=(len(rows_used), len(cols_used)))
    E.sum_duplicates()
    E.sort_indices()
    return ExportMatrix(values=E, rows=panel.firm_ids[rows_used], cols=col_labels[cols_used],
                        meta={"years": (first, last), "resolution": resolution})


def matrix_from_frame(frame, row="country", col="hs6", value="value", meta=None):
    """ExportMatrix from a long table (duplicate pairs summed)."""
    frame = frame[frame[value] > 0]
    r, rows = pd.factorize(frame[row].to_numpy(dtype=object), sort=True)
    c, cols = pd.factorize(frame[col].to_numpy(dtype=object), sort=True)
    E = sp.csr_matrix((frame[value].to_numpy(dtype=np.float64), (r, c)),
                      shape=(len(rows), len(cols)))
    E.sum_duplicates()
    E.sort_indices()
    return ExportMatrix(values=E, rows=np.asarray(rows, dtype=object),
                        cols=np.asarray(cols, dtype=object), meta=dict(meta or {}))


def rca(matrix):
    """RCA of every cell: row share of the product over its world share.

    Rows whose total is zero are dropped with a warning.
    """
    E = matrix.values
    if E.nnz == 0 or matrix.total <= 0:
        raise ComputeError("RCA undefined for an all-zero matrix")
    keep = matrix.row_totals > 0
    rows = matrix.rows
    if not keep.all():
        warnings.warn(f"dropping {int((~keep).sum())} rows with zero total before RCA",
                      stacklevel=2)
        E = E[keep]
        rows = rows[keep]
    R = _rca_values(E.tocsr())
    return RcaMatrix(values=R, rows=rows, cols=matrix.cols, meta=dict(matrix.meta))


def binarize(rca_matrix, threshold=1.0, rtol=1e-12):
    """1 where RCA exceeds ``threshold`` (strictly), else 0."""
    if not threshold > 0:
        raise ValidationError("threshold must be positive")
    M = _binarize_values(rca_matrix.values, threshold, rtol)
    return BinaryMatrix(values=M, rows=rca_matrix.rows, cols=rca_matrix.cols,
                        meta={**rca_matrix.meta, "threshold": float(threshold)})


def diversification(binary):
    """Number of significantly exported products per row."""
    d = np.asarray(binary.values.sum(axis=1)).ravel().astype(np.int64)
    return pd.Series(d, index=pd.Index(binary.rows, name="firm_id"), name="d_total")


# ---------------------------------------------------------------------------
# on-disk cache

CACHE_VERSION = 1


def cache_key(input_digest, years, resolution, threshold):
    payload = json.dumps({"v": CACHE_VERSION, "input": input_digest, "years": list(years),
                          "resolution": resolution, "threshold": threshold}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:32]


def save_matrix(matrix, directory, key):
    os.makedirs(directory, exist_ok=True)
    M = matrix.values.tocsr()
    path = os.path.join(directory, f"{key}.npz")
    np.savez(path, version=CACHE_VERSION, kind=type(matrix).__name__, data=M.data,
             indices=M.indices, indptr=M.indptr, shape=np.array(M.shape),
             rows=np.asarray(matrix.rows, dtype=str), cols=np.asarray(matrix.cols, dtype=str),
             meta=json.dumps(matrix.meta, default=list))
    return path


def load_matrix(directory, key):
    """Cached matrix for ``key`` or None when absent or of another version."""
    path = os.path.join(directory, f"{key}.npz")
    if not os.path.exists(path):
        return None
    with np.load(path, allow_pickle=False) as z:
        if int(z["version"]) != CACHE_VERSION:
            return None
        kind = {"ExportMatrix": ExportMatrix, "RcaMatrix": RcaMatrix,
                "BinaryMatrix": BinaryMatrix}[str(z["kind"])]
        M = sp.csr_matrix((z["data"], z["indices"], z["indptr"]), shape=tuple(z["shape"]))
        meta = json.loads(str(z["meta"]))
        if "years" in meta:
            meta["years"] = tuple(meta["years"])
        return kind(values=M, rows=z["rows"].astype(object), cols=z["cols"].astype(object),
                    meta=meta)
