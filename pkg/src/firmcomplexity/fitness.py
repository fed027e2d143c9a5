"""Fitness-Complexity iteration, basket complexity and Pearson correlation."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd
import scipy.sparse as sp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_1d_finite, check_binary_matrix
from .exceptions import ComputeError, ValidationError
from .prody import _weighted_mean_rows

SCORE_TRANSFORMS = ("log", "raw")


@dataclass(frozen=True, eq=False)
class FitnessResult:
    fitness: pd.Series
    complexity: pd.Series
    n_iter: int
    residual: float
    converged: bool


def _fc_step(M, MT, F, Q):
    F_new = M @ Q
    Q_new = 1.0 / (MT @ (1.0 / F))
    return F_new / F_new.mean(), Q_new / Q_new.mean()


def _fitness_complexity_values(M, tol=1e-8, max_iter=1000):
    """Iterate the map from a uniform start; both vectors have mean 1.

    Stops when the largest relative change of either vector falls below
    ``tol``. Returns (F, Q, n_iter, residual, converged).
    """
    M = sp.csr_matrix(M, dtype=np.float64)
    MT = M.T.tocsr()
    F = np.ones(M.shape[0])
    Q = np.ones(M.shape[1])
    residual = np.inf
    for it in range(1, max_iter + 1):
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            F_new, Q_new = _fc_step(M, MT, F, Q)
        if not (np.all(np.isfinite(F_new)) and np.all(np.isfinite(Q_new))
                and F_new.min() > 0 and Q_new.min() > 0):
            warnings.warn(f"fitness iteration left the positive range at step {it}; "
                          "returning the last positive iterate", stacklevel=3)
            return F, Q, it - 1, residual, False
        residual = max(np.max(np.abs(F_new - F) / F), np.max(np.abs(Q_new - Q) / Q))
        F, Q = F_new, Q_new
        if residual < tol:
            return F, Q, it, float(residual), True
    warnings.warn(f"fitness iteration did not reach tol={tol} in {max_iter} steps "
                  f"(residual {residual:.3g})", stacklevel=3)
    return F, Q, max_iter, float(residual), False


def _drop_empty(M):
    rows = np.asarray(M.sum(axis=1)).ravel() > 0
    cols = np.asarray(M.sum(axis=0)).ravel() > 0
    if not rows.all() or not cols.all():
        warnings.warn(f"dropping {int((~rows).sum())} empty rows and {int((~cols).sum())} "
                      "empty columns before the fitness iteration", stacklevel=3)
    return M[rows][:, cols], rows, cols


def fitness_complexity(binary, tol=1e-8, max_iter=1000):
    """Fitness of rows and complexity of products of a 0/1 matrix."""
    M = check_binary_matrix(binary.values)
    M, rows, cols = _drop_empty(M)
    if M.nnz == 0:
        raise ComputeError("fitness undefined for an all-zero matrix")
    F, Q, n_iter, residual, converged = _fitness_complexity_values(M, tol, max_iter)
    return FitnessResult(
        fitness=pd.Series(F, index=pd.Index(binary.rows[rows]), name="fitness"),
        complexity=pd.Series(Q, index=pd.Index(binary.cols[cols], name="hs6"), name="complexity"),
        n_iter=n_iter, residual=residual, converged=converged)


def complexity_scores(result, transform="log"):
    """Product complexity, log-transformed (default) then z-scored."""
    if transform not in SCORE_TRANSFORMS:
        raise ValidationError(f"transform must be one of {SCORE_TRANSFORMS}")
    q = result.complexity.to_numpy(dtype=np.float64)
    x = np.log(q) if transform == "log" else q
    std = x.std()
    if not std > 0:
        raise ComputeError("complexity scores have zero variance")
    return pd.Series((x - x.mean()) / std, index=result.complexity.index, name="complexity_z")


def avg_complexity(firm_exports, result, transform="log"):
    """Export-volume weighted mean of z-scored product complexity per firm."""
    z = complexity_scores(result, transform)
    scores = z.reindex(pd.Index(firm_exports.cols)).to_numpy(dtype=np.float64)
    mean, coverage = _weighted_mean_rows(firm_exports.values, scores)
    keep = np.isfinite(mean)
    if not keep.all():
        warnings.warn(f"{int((~keep).sum())} firms have no product with a complexity score; "
                      "dropped", stacklevel=2)
    return pd.DataFrame({"avg_complexity": mean[keep], "coverage": coverage[keep]},
                        index=pd.Index(firm_exports.rows[keep], name="firm_id"))


def pearson(x, y):
    """Product-moment correlation of two equally long series."""
    x = check_1d_finite(x, "x", min_length=3)
    y = check_1d_finite(y, "y", min_length=3)
    if x.shape != y.shape:
        raise ValidationError("x and y must have equal length")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise ComputeError("correlation undefined for a constant series")
    return float(dx @ dy) / np.sqrt(sxx * syy)


class FitnessComplexity(BaseEstimator):
    """Fitness-Complexity fixed point of a 0/1 matrix.

    Attributes
    ----------
    fitness_ : ndarray of shape (n_rows,)
        NaN for rows without any product.
    complexity_ : ndarray of shape (n_products,)
        NaN for products nobody exports.
    n_iter_, residual_, converged_
    """

    def __init__(self, tol=1e-8, max_iter=1000):
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y=None):
        M = check_binary_matrix(X)
        Mc, rows, cols = _drop_empty(M)
        if Mc.nnz == 0:
            raise ComputeError("fitness undefined for an all-zero matrix")
        F, Q, self.n_iter_, self.residual_, self.converged_ = _fitness_complexity_values(
            Mc, self.tol, self.max_iter)
        self.fitness_ = np.full(M.shape[0], np.nan)
        self.fitness_[rows] = F
        self.complexity_ = np.full(M.shape[1], np.nan)
        self.complexity_[cols] = Q
        self.n_features_in_ = M.shape[1]
        return self

    def transform(self, X):
        """Export-weighted mean log complexity (z-scored) of each row of X."""
        check_is_fitted(self, "complexity_")
        ok = np.isfinite(self.complexity_)
        x = np.log(self.complexity_[ok])
        z = np.full(self.complexity_.shape, np.nan)
        z[ok] = (x - x.mean()) / x.std()
        mean, _ = _weighted_mean_rows(sp.csr_matrix(X, dtype=np.float64), z)
        return mean.reshape(-1, 1)
