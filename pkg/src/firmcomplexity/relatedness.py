"""Sapling similarity between products and export-basket coherence."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd
import scipy.sparse as sp
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_binary_matrix, check_nonnegative_matrix
from .exceptions import ValidationError


@dataclass(frozen=True, eq=False)
class CooccurrenceTable:
    """``co[p, q]``: rows having both products; ``degree[p] == co[p, p]``."""

    co: np.ndarray
    degree: np.ndarray
    n_rows: int
    products: np.ndarray


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    """Product x product similarity; NaN marks undefined entries.

    ``values`` is a dense array, or CSR when a sparsity cutoff was applied
    (then absent entries are |B| < eps and stored NaN are undefined).
    """

    values: np.ndarray | sp.csr_matrix
    products: np.ndarray
    n_undefined: int = 0
    eps: float = 0.0

    def dense(self):
        if sp.issparse(self.values):
            return self.values.toarray()
        return self.values

    def asymmetry(self):
        """Largest |B_pq - B_qp| over entries defined both ways."""
        B = self.dense()
        diff = np.abs(B - B.T)
        return float(np.nanmax(diff)) if np.isfinite(diff).any() else 0.0

    def to_frame(self):
        if sp.issparse(self.values):
            coo = self.values.tocoo()
            r, c, v = coo.row, coo.col, coo.data
        else:
            r, c = np.nonzero(self.values != 0)
            v = self.values[r, c]
        return pd.DataFrame({"p": self.products[r], "p_prime": self.products[c], "B": v})


@dataclass(frozen=True, eq=False)
class CoherenceTable:
    frame: pd.DataFrame
    n_undefined_pairs: int = 0


def _cooccurrence_values(M):
    M = sp.csc_matrix(M, dtype=np.int32)
    co = (M.T @ M).toarray()
    return co, np.diag(co).copy()


def cooccurrence(binary):
    """Pairwise counts of rows exporting both products."""
    M = check_binary_matrix(binary.values)
    co, k = _cooccurrence_values(M)
    return CooccurrenceTable(co=co, degree=k, n_rows=M.shape[0], products=binary.cols)


def _sapling_block(co, k_row, k_col, N):
    """Sapling similarity for a tile: rows play p, columns play p'."""
    co = co.astype(np.float64)
    kp = k_row.astype(np.float64)[:, None]
    kq = k_col.astype(np.float64)[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        rest = kp - co
        num = co * (1.0 - co / kq) + rest * (1.0 - rest / (N - kq))
        f = num / (kp * (1.0 - kp / N))
        B = np.where(co * N / (kp * kq) >= 1.0, 1.0 - f, f - 1.0)
    degenerate = (kp <= 0) | (kp >= N) | (kq <= 0) | (kq >= N)
    B = np.where(degenerate, np.nan, B)
    return B


def sapling_values(co, degree, n_rows, eps=0.0, block_size=1024):
    """Sapling similarity from co-occurrence counts, computed in row tiles."""
    P = len(degree)
    N = float(n_rows)
    if eps > 0:
        parts = []
        for start in range(0, P, block_size):
            stop = min(start + block_size, P)
            B = _sapling_block(co[start:stop], degree[start:stop], degree, N)
            keep = np.isnan(B) | (np.abs(B) >= eps)
            r, c = np.nonzero(keep)
            parts.append(sp.csr_matrix((B[r, c], (r, c)), shape=(stop - start, P)))
        return sp.vstack(parts, format="csr") if parts else sp.csr_matrix((0, 0))
    out = np.empty((P, P), dtype=np.float64)
    for start in range(0, P, block_size):
        stop = min(start + block_size, P)
        out[start:stop] = _sapling_block(co[start:stop], degree[start:stop], degree, N)
    return out


def sapling(co, eps=0.0, block_size=1024):
    """Sapling similarity of every ordered product pair.

    Entries involving a product exported by no row or by every row are
    undefined (NaN) and reported with a warning. With ``eps > 0`` entries
    with |B| < eps are dropped and a sparse matrix is returned.
    """
    B = sapling_values(co.co, co.degree, co.n_rows, eps=eps, block_size=block_size)
    n_bad = int(((co.degree <= 0) | (co.degree >= co.n_rows)).sum())
    n_undefined = 0
    if n_bad:
        P = len(co.degree)
        n_undefined = P * P - (P - n_bad) ** 2
        warnings.warn(f"{n_bad} products have degree 0 or N; {n_undefined} similarity "
                      "entries undefined", stacklevel=2)
    return SimilarityMatrix(values=B, products=co.products, n_undefined=n_undefined, eps=eps)


def _coherence_values(E, B, block_size=2048):
    """Off-diagonal weighted mean similarity per row of E.

    Returns (coherence, degenerate flag, undefined pair count). Undefined
    similarities count as 0; single-product rows get 1 and the flag.
    """
    E = sp.csr_matrix(E, dtype=np.float64)
    n = E.shape[0]
    sparse_B = sp.issparse(B)
    if sparse_B:
        Bz = B.tocsr(copy=True)
        undefined = sp.csr_matrix((np.isnan(Bz.data).astype(np.float64), Bz.indices, Bz.indptr),
                                  shape=Bz.shape)
        Bz.data = np.nan_to_num(Bz.data, nan=0.0)
        diag = Bz.diagonal()
    else:
        undefined = np.isnan(B)
        Bz = np.where(undefined, 0.0, B)
        diag = np.diag(Bz).copy()
        undefined = undefined.astype(np.float64)
        if not undefined.any():
            undefined = None
    num = np.empty(n)
    n_undef = 0
    P = (E != 0).astype(np.float64)
    for start in range(0, n, block_size):
        stop = min(start + block_size, n)
        Eb = E[start:stop]
        EB = Eb @ Bz
        num[start:stop] = np.asarray(Eb.multiply(EB).sum(axis=1)).ravel()
        if undefined is not None:
            Pb = P[start:stop]
            U = Pb @ undefined
            pair_undef = np.asarray(Pb.multiply(U).sum(axis=1)).ravel()
            if sparse_B:
                diag_u = np.asarray(Pb @ undefined.diagonal()).ravel()
            else:
                diag_u = np.asarray(Pb @ np.diag(undefined)).ravel()
            n_undef += int(round((pair_undef - diag_u).sum()))
    sq = E.multiply(E)
    num -= np.asarray(sq @ diag).ravel()
    tot = np.asarray(E.sum(axis=1)).ravel()
    den = tot ** 2 - np.asarray(sq.sum(axis=1)).ravel()
    nnz = np.diff(E.indptr)
    degenerate = nnz == 1
    with np.errstate(divide="ignore", invalid="ignore"):
        C = num / den
    C[degenerate] = 1.0
    C[nnz == 0] = np.nan
    return C, degenerate, n_undef


def coherence(exports, sim, block_size=2048):
    """Export-weighted mean similarity over distinct product pairs per firm.

    Products of ``exports`` missing from ``sim`` are left out entirely.
    Single-product firms get coherence 1 with ``degenerate`` set; firms with
    no covered product are dropped.
    """
    pos = pd.Index(sim.products).get_indexer(exports.cols)
    covered = pos >= 0
    E = exports.values[:, np.flatnonzero(covered)]
    B = sim.values
    idx = pos[covered]
    B = B[idx][:, idx] if sp.issparse(B) else B[np.ix_(idx, idx)]
    C, degenerate, n_undef = _coherence_values(E, B, block_size)
    if n_undef:
        warnings.warn(f"{n_undef} firm-level product pairs have undefined similarity; "
                      "counted as 0", stacklevel=2)
    keep = np.isfinite(C)
    frame = pd.DataFrame({"coherence": C[keep], "degenerate": degenerate[keep]},
                         index=pd.Index(exports.rows[keep], name="firm_id"))
    return CoherenceTable(frame=frame, n_undefined_pairs=n_undef)


class SaplingSimilarity(TransformerMixin, BaseEstimator):
    """Sapling similarity learned from a 0/1 matrix; transforms to coherence.

    ``fit(M)`` computes ``similarity_`` (products x products, NaN where
    undefined). ``transform(E)`` returns the coherence of each row of a
    non-negative matrix with the same columns, as a one-column array.

    Parameters
    ----------
    eps : float, default=0.0
        Entries with |B| < eps are not stored (sparse ``similarity_``).
    block_size : int, default=1024
        Tile height for the pairwise computation.
    """

    def __init__(self, eps=0.0, block_size=1024):
        self.eps = eps
        self.block_size = block_size

    def fit(self, X, y=None):
        M = check_binary_matrix(X)
        co, k = _cooccurrence_values(M)
        self.cooccurrence_ = co
        self.degree_ = k
        self.similarity_ = sapling_values(co, k, M.shape[0], eps=self.eps,
                                          block_size=self.block_size)
        self.n_features_in_ = M.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "similarity_")
        E = check_nonnegative_matrix(X)
        if E.shape[1] != self.n_features_in_:
            raise ValidationError(f"expected {self.n_features_in_} columns, got {E.shape[1]}")
        C, _, _ = _coherence_values(E, self.similarity_)
        return C.reshape(-1, 1)
