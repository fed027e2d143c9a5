"""Firm-product blocks by bipartite modularity maximization (BRIM).

Bipartite modularity of a joint labelling of rows (firms) and columns
(products) is

    Q = (1/m) * sum_{f,p} (A_fp - k_f k_p / m) * delta(c_f, c_p)

summed over row/column pairs only. Label ``-1`` marks the residual block of
isolated nodes and never matches anything, so such nodes add nothing to Q
and are never "in block" for diversification counts.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import scipy.sparse as sp
from joblib import Parallel, delayed
from scipy.sparse.csgraph import connected_components
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_binary_matrix, check_labels
from .exceptions import ComputeError, ValidationError

logger = logging.getLogger(__name__)

RESIDUAL = -1


@dataclass(frozen=True, eq=False)
class BipartiteGraph:
    """Unweighted bipartite graph built from a 0/1 matrix."""

    A: sp.csr_matrix
    rows: np.ndarray
    cols: np.ndarray

    @classmethod
    def from_binary(cls, binary):
        return cls(A=check_binary_matrix(binary.values), rows=binary.rows, cols=binary.cols)

    @classmethod
    def from_matrix(cls, A):
        A = check_binary_matrix(A)
        return cls(A=A, rows=np.arange(A.shape[0]), cols=np.arange(A.shape[1]))

    @property
    def row_degree(self):
        return np.asarray(self.A.sum(axis=1)).ravel().astype(np.float64)

    @property
    def col_degree(self):
        return np.asarray(self.A.sum(axis=0)).ravel().astype(np.float64)

    @property
    def m(self):
        return float(self.A.nnz)


@dataclass(frozen=True, eq=False)
class BlockPartition:
    """Joint block labels of firms (rows) and products (columns)."""

    row_labels: pd.Series
    col_labels: pd.Series
    modularity: float = float("nan")
    n_blocks: int = 0
    seed: int | None = None
    history: tuple = ()
    converged: bool = True
    kind: str = "brim"
    resolution: str = "HS4"
    ties: pd.Series | None = None
    scan: dict = field(default_factory=dict)

    def to_frame(self):
        rows = pd.DataFrame({"node_type": "firm", "node_id": self.row_labels.index.astype(str),
                             "block_id": self.row_labels.to_numpy()})
        cols = pd.DataFrame({"node_type": "product", "node_id": self.col_labels.index.astype(str),
                             "block_id": self.col_labels.to_numpy()})
        return pd.concat([rows, cols], ignore_index=True)


# ---------------------------------------------------------------------------
# modularity


def _modularity(A, kr, kc, m, lr, lc):
    if m <= 0:
        raise ComputeError("modularity undefined for a graph without edges")
    coo = A.tocoo()
    same = (lr[coo.row] == lc[coo.col]) & (lr[coo.row] >= 0)
    e_in = float(coo.data[same].sum())
    nb = int(max(lr.max(initial=-1), lc.max(initial=-1))) + 1
    if nb == 0:
        return 0.0
    okr, okc = lr >= 0, lc >= 0
    Kr = np.bincount(lr[okr], weights=kr[okr], minlength=nb)
    Kc = np.bincount(lc[okc], weights=kc[okc], minlength=nb)
    return (e_in - float(Kr @ Kc) / m) / m


def bipartite_modularity(graph, row_labels, col_labels):
    """Barber bipartite modularity of a joint labelling.

    ``graph`` is a :class:`BipartiteGraph` or anything accepted as a binary
    matrix. Labels are integer arrays aligned with the graph's rows and
    columns; ``-1`` marks unassigned nodes.
    """
    if not isinstance(graph, BipartiteGraph):
        graph = BipartiteGraph.from_matrix(graph)
    lr = check_labels(row_labels, graph.A.shape[0], "row_labels")
    lc = check_labels(col_labels, graph.A.shape[1], "col_labels")
    return _modularity(graph.A, graph.row_degree, graph.col_degree, graph.m, lr, lc)


# ---------------------------------------------------------------------------
# BRIM core


def _onehot(labels, c):
    n = labels.shape[0]
    return sp.csr_matrix((np.ones(n), (np.arange(n), labels)), shape=(n, c))


def _best_response(A, k_self, k_other, m, other_labels, c, current):
    """Labels of one side maximizing Q given the other side's labels."""
    S = (A @ _onehot(other_labels, c)).toarray()
    S -= np.outer(k_self, np.bincount(other_labels, weights=k_other, minlength=c) / m)
    new = S.argmax(axis=1)
    if current is not None:
        idx = np.arange(len(new))
        keep = S[idx, current] >= S[idx, new]
        new = np.where(keep, current, new)
    q = float(S[np.arange(len(new)), new].sum()) / m
    return new, q


def _brim_run(A, AT, kr, kc, m, c, seed_seq, max_iter):
    rng = np.random.default_rng(seed_seq)
    n_r, n_c = A.shape
    lr = lc = None
    history = []
    if n_c <= n_r:
        lc = rng.integers(c, size=n_c)
        lr, _ = _best_response(A, kr, kc, m, lc, c, None)
    else:
        lr = rng.integers(c, size=n_r)
    converged = False
    for _ in range(max_iter):
        new_lc, _ = _best_response(AT, kc, kr, m, lr, c, lc)
        new_lr, q = _best_response(A, kr, kc, m, new_lc, c, lr)
        changed = lc is None or not (np.array_equal(new_lc, lc) and np.array_equal(new_lr, lr))
        lc, lr = new_lc, new_lr
        history.append(q)
        if not changed:
            converged = True
            break
    return lr, lc, history, converged


def _compact(lr, lc):
    """Relabel non-empty blocks 0..K-1 by decreasing firm count."""
    blocks = np.union1d(lr[lr >= 0], lc[lc >= 0])
    n_firms = np.array([(lr == b).sum() for b in blocks])
    n_prod = np.array([(lc == b).sum() for b in blocks])
    first = np.array([np.flatnonzero(lr == b)[0] if (lr == b).any()
                      else len(lr) + np.flatnonzero(lc == b)[0] for b in blocks])
    order = np.lexsort((first, -n_prod, -n_firms))
    mapping = np.full(int(blocks.max(initial=-1)) + 2, RESIDUAL)
    mapping[blocks[order]] = np.arange(len(blocks))
    return np.where(lr >= 0, mapping[lr], RESIDUAL), np.where(lc >= 0, mapping[lc], RESIDUAL)


@dataclass
class _RunResult:
    row_labels: np.ndarray
    col_labels: np.ndarray
    modularity: float
    history: list
    converged: bool


def brim(graph, seed=0, max_blocks=32, restarts=32, n_blocks=None, max_iter=200, n_jobs=1):
    """Maximize bipartite modularity by alternating best responses.

    Each restart draws random labels for the smaller node set, then
    alternately moves every node of one side to the block maximizing Q
    given the other side, until a sweep changes nothing. The best of
    ``restarts`` runs is kept (ties go to the lowest restart index). If
    ``n_blocks`` is None the label count is scanned by doubling from 2 up to
    ``max_blocks`` and then bisecting around the best count.

    Returns a :class:`BlockPartition` over the graph's row/column labels.
    Isolated nodes get the residual label ``-1``.
    """
    if not isinstance(graph, BipartiteGraph):
        graph = BipartiteGraph.from_matrix(graph)
    A_full = graph.A
    if A_full.nnz == 0:
        raise ComputeError("BRIM needs at least one edge")
    kr_full, kc_full = graph.row_degree, graph.col_degree
    active_r, active_c = kr_full > 0, kc_full > 0
    A = A_full[active_r][:, active_c].astype(np.float64).tocsr()
    AT = A.T.tocsr()
    kr, kc = kr_full[active_r], kc_full[active_c]
    m = float(A.sum())
    n_comp, _ = connected_components(sp.bmat([[None, A], [A.T, None]]), directed=False)
    max_blocks = int(max(2, min(max_blocks, A.shape[0] + A.shape[1])))

    cache = {}

    def best_of(c):
        if c in cache:
            return cache[c]
        seeds = np.random.SeedSequence([int(seed), int(c)]).spawn(restarts)
        if n_jobs == 1:
            runs = [_brim_run(A, AT, kr, kc, m, c, s, max_iter) for s in seeds]
        else:
            runs = Parallel(n_jobs=n_jobs)(
                delayed(_brim_run)(A, AT, kr, kc, m, c, s, max_iter) for s in seeds)
        best = None
        for lr, lc, hist, conv in runs:
            if best is None or hist[-1] > best.modularity:
                best = _RunResult(lr, lc, hist[-1], hist, conv)
        cache[c] = best
        logger.debug("BRIM c=%d best Q=%.6f", c, best.modularity)
        return best

    if n_blocks is not None:
        chosen = best_of(int(n_blocks))
    else:
        prev = -np.inf
        c = 2
        while True:
            q = best_of(c).modularity
            if q <= prev or c >= max_blocks:
                break
            prev = q
            c = min(2 * c, max_blocks)
        while True:
            tried = sorted(cache)
            best_c = max(tried, key=lambda k: (cache[k].modularity, -k))
            lower = [k for k in tried if k < best_c]
            upper = [k for k in tried if k > best_c]
            lo = lower[-1] if lower else 1
            hi = upper[0] if upper else None
            todo = []
            if best_c - lo > 1:
                todo.append((lo + best_c) // 2)
            if hi is not None and hi - best_c > 1:
                todo.append((best_c + hi) // 2)
            todo = [k for k in todo if k not in cache]
            if not todo:
                break
            for k in todo:
                best_of(k)
        chosen = cache[best_c]

    if not chosen.converged:
        warnings.warn(f"BRIM did not converge within {max_iter} sweeps; returning best so far",
                      stacklevel=2)
    lr_full = np.full(A_full.shape[0], RESIDUAL)
    lc_full = np.full(A_full.shape[1], RESIDUAL)
    lr_full[active_r] = chosen.row_labels
    lc_full[active_c] = chosen.col_labels
    lr_full, lc_full = _compact(lr_full, lc_full)
    q = _modularity(A_full, kr_full, kc_full, float(A_full.nnz), lr_full, lc_full)
    n_found = len(np.union1d(lr_full[lr_full >= 0], lc_full[lc_full >= 0]))
    return BlockPartition(
        row_labels=pd.Series(lr_full, index=pd.Index(graph.rows, name="firm_id"), name="block"),
        col_labels=pd.Series(lc_full, index=pd.Index(graph.cols, name="product"), name="block"),
        modularity=q, n_blocks=n_found, seed=seed, history=tuple(chosen.history),
        converged=chosen.converged, kind="brim",
        scan={"modularity_by_count": {str(k): float(v.modularity)
                                      for k, v in sorted(cache.items())},
              "n_components": int(n_comp)})


class BRIM(ClusterMixin, BaseEstimator):
    """Bipartite modularity co-clustering of a 0/1 matrix.

    Parameters
    ----------
    n_blocks : int or None, default=None
        Fixed number of labels; None scans counts up to ``max_blocks``.
    max_blocks : int, default=32
    restarts : int, default=32
    max_iter : int, default=200
        Sweep cap per restart.
    random_state : int, default=0
    n_jobs : int, default=1
        Restarts run in parallel; the result does not depend on it.

    Attributes
    ----------
    row_labels_, column_labels_ : ndarray
        Block of each row / column, ``-1`` for isolated nodes.
    labels_ : ndarray
        Alias of ``row_labels_``.
    modularity_ : float
    n_blocks_ : int
    history_ : tuple of float
        Q after each sweep of the selected restart (non-decreasing).
    converged_ : bool
    """

    def __init__(self, n_blocks=None, max_blocks=32, restarts=32, max_iter=200,
                 random_state=0, n_jobs=1):
        self.n_blocks = n_blocks
        self.max_blocks = max_blocks
        self.restarts = restarts
        self.max_iter = max_iter
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        graph = BipartiteGraph.from_matrix(X)
        part = brim(graph, seed=self.random_state, max_blocks=self.max_blocks,
                    restarts=self.restarts, n_blocks=self.n_blocks, max_iter=self.max_iter,
                    n_jobs=self.n_jobs)
        self.row_labels_ = part.row_labels.to_numpy()
        self.column_labels_ = part.col_labels.to_numpy()
        self.labels_ = self.row_labels_
        self.modularity_ = part.modularity
        self.n_blocks_ = part.n_blocks
        self.history_ = part.history
        self.converged_ = part.converged
        self.n_features_in_ = graph.A.shape[1]
        return self

    def score(self, X, y=None):
        """Modularity of the fitted labels on ``X``."""
        check_is_fitted(self, "row_labels_")
        return bipartite_modularity(X, self.row_labels_, self.column_labels_)


# ---------------------------------------------------------------------------
# diversification and alternative partitions


def block_diversification(binary, partition):
    """In-block and out-of-block counts of significantly exported products.

    A product is in-block for a firm when both carry the same (non-residual)
    block label.
    """
    lr = partition.row_labels.reindex(pd.Index(binary.rows))
    lc = partition.col_labels.reindex(pd.Index(binary.cols))
    if lr.isna().any():
        raise ValidationError(f"{int(lr.isna().sum())} firms are not covered by the partition")
    if lc.isna().any():
        raise ValidationError(f"{int(lc.isna().sum())} products are not covered by the partition")
    lr = lr.to_numpy(dtype=np.int64)
    lc = lc.to_numpy(dtype=np.int64)
    coo = binary.values.tocoo()
    same = (lr[coo.row] == lc[coo.col]) & (lr[coo.row] >= 0)
    w = coo.data.astype(np.int64)
    n = binary.shape[0]
    d_in = np.bincount(coo.row, weights=w * same, minlength=n).astype(np.int64)
    d_tot = np.bincount(coo.row, weights=w, minlength=n).astype(np.int64)
    return pd.DataFrame({"d_in": d_in, "d_out": d_tot - d_in, "d_total": d_tot},
                        index=pd.Index(binary.rows, name="firm_id"))


def sector_partition(matrix, hs_map):
    """Label each firm by the HS section of its largest export value.

    Products are labelled by their own section. Ties go to the lowest
    section index and are flagged in ``ties``.
    """
    section = hs_map.section_of(matrix.cols)
    n_sec = int(section.max()) + 1
    S = (matrix.values @ sp.csr_matrix((np.ones(len(section)),
                                        (np.arange(len(section)), section)),
                                       shape=(len(section), n_sec))).toarray()
    label = S.argmax(axis=1)
    ties = (S == S.max(axis=1, keepdims=True)).sum(axis=1) > 1
    return BlockPartition(
        row_labels=pd.Series(label.astype(np.int64), index=pd.Index(matrix.rows, name="firm_id"),
                             name="block"),
        col_labels=pd.Series(section, index=pd.Index(matrix.cols, name="product"), name="block"),
        n_blocks=int(len(np.unique(section))), kind="sector",
        resolution=matrix.meta.get("resolution", "HS6"),
        ties=pd.Series(ties, index=pd.Index(matrix.rows, name="firm_id"), name="tie"))


def map_blocks_hs4_to_hs6(partition, hs_map, products=None):
    """Give every HS6 product the block of its 4-digit heading.

    ``products`` defaults to all HS6 codes of the map. A product whose
    heading is absent from the partition is fatal.
    """
    if partition.resolution == "HS6":
        if products is None:
            return partition
        col = partition.col_labels.reindex(pd.Index(products))
        if col.isna().any():
            raise ValidationError("partition does not cover all requested products")
        return _replace(partition, col_labels=col.astype(np.int64))
    hs6 = pd.Index(hs_map.hs6 if products is None else products)
    hs4 = pd.Index(hs_map.hs4_of(hs6))
    labels = partition.col_labels.reindex(hs4)
    if labels.isna().any():
        missing = sorted(set(hs4[labels.isna().to_numpy()]))
        raise ValidationError(f"HS4 headings missing from the partition: {missing[:10]}")
    col = pd.Series(labels.to_numpy(dtype=np.int64), index=hs6.rename("product"), name="block")
    return _replace(partition, col_labels=col, resolution="HS6")


def _replace(partition, **changes):
    from dataclasses import replace
    return replace(partition, **changes)


def block_composition(partition, hs_map, top=3):
    """Per block: member counts and the HS sections with most products."""
    labels = hs_map.section_labels()
    col = partition.col_labels
    col = col[col >= 0]
    sections = pd.Series(hs_map.section_of(col.index), index=col.index)
    firm_counts = partition.row_labels[partition.row_labels >= 0].value_counts()
    n_firms_total = int((partition.row_labels >= 0).sum())
    rows = []
    for b in sorted(col.unique()):
        members = sections[col == b]
        shares = members.value_counts(normalize=True).sort_index()
        shares = shares.sort_values(ascending=False, kind="mergesort").head(top)
        nf = int(firm_counts.get(b, 0))
        rows.append({
            "block_id": int(b),
            "n_firms": nf,
            "firm_share": nf / n_firms_total if n_firms_total else float("nan"),
            "n_products": int(len(members)),
            "top_sections": "; ".join(f"{int(s)}:{labels.get(s, '')}={v:.3f}"
                                      for s, v in shares.items()),
        })
    return pd.DataFrame(rows)
