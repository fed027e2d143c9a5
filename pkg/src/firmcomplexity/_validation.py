"""Input validation helpers shared by the estimators."""

import numpy as np
import scipy.sparse as sp
from sklearn.utils.validation import check_array

from .exceptions import ValidationError


def check_nonnegative_matrix(X, name="X", dtype=np.float64):
    """Return ``X`` as CSR with non-negative finite entries and no stored zeros."""
    X = check_array(X, accept_sparse="csr", dtype=dtype, ensure_min_samples=1,
                    ensure_min_features=1, ensure_all_finite=True)
    X = sp.csr_matrix(X, dtype=dtype, copy=True)
    if X.nnz and X.data.min() < 0:
        raise ValidationError(f"{name} has negative entries")
    X.eliminate_zeros()
    X.sort_indices()
    return X


def check_binary_matrix(X, name="M"):
    """Return ``X`` as an int8 CSR 0/1 matrix."""
    X = check_array(X, accept_sparse="csr", dtype=None, ensure_min_samples=1,
                    ensure_min_features=1)
    X = sp.csr_matrix(X)
    X.eliminate_zeros()
    if X.nnz and not np.all(X.data == 1):
        raise ValidationError(f"{name} must contain only 0/1 entries")
    X = X.astype(np.int8)
    X.sort_indices()
    return X


def check_labels(labels, n, name="labels"):
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ValidationError(f"{name} must have shape ({n},), got {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValidationError(f"{name} must be integer block ids")
    return labels.astype(np.int64)


def check_1d_finite(x, name="x", min_length=1):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValidationError(f"{name} must be one-dimensional")
    if x.shape[0] < min_length:
        raise ValidationError(f"{name} needs at least {min_length} values, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise ValidationError(f"{name} contains non-finite values")
    return x
