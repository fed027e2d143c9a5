"""Figure data: binned heatmaps and kernel-smoothed curves."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.ndimage import gaussian_filter
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_1d_finite
from .exceptions import ComputeError, ValidationError


@dataclass(frozen=True, eq=False)
class FigureGrid:
    """Binned means of a colour variable over an (x, y) plane.

    Empty cells are NaN in ``raw_mean`` and ``smoothed`` and 0 in ``count``.
    """

    x_edges: np.ndarray
    y_edges: np.ndarray
    count: np.ndarray
    raw_mean: np.ndarray
    smoothed: np.ndarray
    sigma: float

    def to_frame(self):
        nx, ny = self.count.shape
        ix, iy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        ix, iy = ix.ravel(), iy.ravel()
        return pd.DataFrame({
            "ix": ix, "iy": iy,
            "x_lo": self.x_edges[ix], "x_hi": self.x_edges[ix + 1],
            "y_lo": self.y_edges[iy], "y_hi": self.y_edges[iy + 1],
            "count": self.count.ravel(),
            "mean_raw": self.raw_mean.ravel(),
            "mean_smoothed": self.smoothed.ravel(),
        })


@dataclass(frozen=True, eq=False)
class Curve:
    grid: np.ndarray
    fitted: np.ndarray
    bandwidth: float
    n_points: int

    def to_frame(self):
        return pd.DataFrame({"x": self.grid, "y": self.fitted})


def _edges(v, bins):
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    return np.linspace(lo, hi, bins + 1)


def emit_heatmap(x, y, color, bins=30, sigma=3.0):
    """Cell means of ``color`` on a ``bins`` grid, then Gaussian smoothing.

    Smoothing is a normalized convolution over occupied cells only: each
    occupied cell becomes the Gaussian-weighted average of the occupied
    cells around it. Empty cells stay empty.
    """
    x = check_1d_finite(x, "x")
    y = check_1d_finite(y, "y")
    color = check_1d_finite(color, "color")
    if not (len(x) == len(y) == len(color)):
        raise ValidationError("x, y and color must have equal length")
    if sigma < 0:
        raise ValidationError("sigma must be non-negative")
    nx, ny = (bins, bins) if np.isscalar(bins) else bins
    xe, ye = _edges(x, nx), _edges(y, ny)
    count, _, _ = np.histogram2d(x, y, bins=[xe, ye])
    total, _, _ = np.histogram2d(x, y, bins=[xe, ye], weights=color)
    occupied = count > 0
    raw = np.full(count.shape, np.nan)
    raw[occupied] = total[occupied] / count[occupied]
    if sigma == 0:
        smoothed = raw.copy()
    else:
        filled = np.where(occupied, raw, 0.0)
        num = gaussian_filter(filled, sigma=sigma, mode="constant", cval=0.0)
        den = gaussian_filter(occupied.astype(np.float64), sigma=sigma, mode="constant", cval=0.0)
        smoothed = np.full(count.shape, np.nan)
        smoothed[occupied] = num[occupied] / den[occupied]
    return FigureGrid(x_edges=xe, y_edges=ye, count=count.astype(np.int64), raw_mean=raw,
                      smoothed=smoothed, sigma=float(sigma))


def silverman_bandwidth(x):
    x = np.asarray(x, dtype=np.float64)
    sd = x.std(ddof=1)
    iqr = np.subtract(*np.percentile(x, [75, 25]))
    spread = min(sd, iqr / 1.349) if iqr > 0 else sd
    return 0.9 * spread * len(x) ** (-0.2)


class NadarayaWatson(RegressorMixin, BaseEstimator):
    """Gaussian-kernel local mean regression of y on a scalar x.

    Parameters
    ----------
    bandwidth : float or None, default=None
        Kernel standard deviation; None uses Silverman's rule of thumb.
    """

    def __init__(self, bandwidth=None):
        self.bandwidth = bandwidth

    def fit(self, X, y):
        x = check_1d_finite(np.asarray(X, dtype=np.float64).reshape(-1), "x", min_length=2)
        y = check_1d_finite(y, "y", min_length=2)
        if x.shape != y.shape:
            raise ValidationError("x and y must have equal length")
        if not x.std() > 0:
            raise ComputeError("kernel regression needs variation in x")
        h = silverman_bandwidth(x) if self.bandwidth is None else float(self.bandwidth)
        if not h > 0:
            raise ValidationError("bandwidth must be positive")
        self.x_, self.y_, self.bandwidth_ = x, y, h
        return self

    def predict(self, X, chunk=256):
        check_is_fitted(self, "bandwidth_")
        g = np.asarray(X, dtype=np.float64).reshape(-1)
        out = np.empty(len(g))
        for s in range(0, len(g), chunk):
            u = (g[s:s + chunk, None] - self.x_[None, :]) / self.bandwidth_
            # shift by the row minimum so far-away grid points do not underflow to 0/0
            e = -0.5 * u * u
            w = np.exp(e - e.max(axis=1, keepdims=True))
            out[s:s + chunk] = (w @ self.y_) / w.sum(axis=1)
        return out


def emit_nonparametric_curve(x, y, bandwidth=None, n_grid=100):
    """Kernel-smoothed mean of y over an evenly spaced grid spanning x."""
    x = check_1d_finite(x, "x", min_length=10)
    y = check_1d_finite(y, "y", min_length=10)
    model = NadarayaWatson(bandwidth=bandwidth).fit(x, y)
    grid = np.linspace(x.min(), x.max(), n_grid)
    return Curve(grid=grid, fitted=model.predict(grid), bandwidth=model.bandwidth_,
                 n_points=len(x))


def render_heatmap(grid, path, xlabel="", ylabel="", title=""):
    """Write a PNG of the smoothed grid (requires matplotlib)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 5))
    data = np.ma.masked_invalid(grid.smoothed.T)
    mesh = ax.pcolormesh(grid.x_edges, grid.y_edges, data, cmap="viridis")
    fig.colorbar(mesh, ax=ax)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    fig.savefig(path, dpi=100, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
