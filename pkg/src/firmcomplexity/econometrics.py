"""Regression variables and cross-sectional OLS with HC1 standard errors.

Yearly firm variables are held as wide tables (index ``firm_id``, integer
year columns). Smoothing is a backward three-year mean that is defined only
where the full window is present.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import scipy.linalg
from scipy import stats
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import ComputeError, RankDeficientError, ValidationError

DEPENDENTS = ("growth", "profit_per_employee")
LOG_VARIABLES = ("revenue", "coherence", "d_in", "d_out", "d_in_section", "d_out_section")
DIVERSIFICATION = ("d_in", "d_out", "d_in_section", "d_out_section")

TERM_LABELS = {
    "log_revenue": "log Operative Revenue",
    "log_coherence": "log Coherence",
    "expy": "EXPY",
    "avg_complexity": "Average Complexity",
    "log_d_out_section": "log Out-of-section Diversification",
    "log_d_in_section": "log In-section Diversification",
    "log_d_out": "log Out-of-block Diversification",
    "log_d_in": "log In-block Diversification",
}


# ---------------------------------------------------------------------------
# yearly series


def _as_wide(series):
    if isinstance(series, pd.Series):
        return series.to_frame().T, True
    return series, False


def backward_mean(series, window=3):
    """Mean of the current and previous ``window - 1`` years.

    Accepts one firm's yearly Series (index = year) or a wide firm x year
    table. Missing years inside a window make the result missing.
    """
    wide, single = _as_wide(series)
    if wide.shape[1] == 0:
        return series.copy()
    years = np.asarray(wide.columns, dtype=np.int64)
    full = np.arange(years.min(), years.max() + 1)
    values = wide.reindex(columns=full).to_numpy(dtype=np.float64)
    out = np.full_like(values, np.nan)
    if values.shape[1] >= window:
        stack = np.stack([values[:, window - 1 - j: values.shape[1] - j] for j in range(window)])
        out[:, window - 1:] = stack.sum(axis=0) / window
    result = pd.DataFrame(out, index=wide.index, columns=full)
    return result.iloc[0].rename(series.name) if single else result


def growth(smoothed, t, dt=4):
    """Log ratio of smoothed revenue at ``t + dt`` over ``t``.

    Returns a frame with ``G`` and a ``reason`` code where G is missing.
    """
    wide, _ = _as_wide(smoothed)
    start = wide[t] if t in wide.columns else pd.Series(np.nan, index=wide.index)
    end = wide[t + dt] if (t + dt) in wide.columns else pd.Series(np.nan, index=wide.index)
    reason = pd.Series(None, index=wide.index, dtype=object)
    missing = start.isna() | end.isna()
    nonpos = ~missing & ((start <= 0) | (end <= 0))
    reason[missing] = "missing smoothed revenue"
    reason[nonpos] = "nonpositive smoothed revenue"
    ok = ~(missing | nonpos)
    G = pd.Series(np.nan, index=wide.index)
    G[ok] = np.log(end[ok] / start[ok])
    return pd.DataFrame({"G": G, "reason": reason})


def symlog(x):
    """sign(x) * log(1 + |x|)."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.log1p(np.abs(x))


def profit_per_employee(fin, window=3):
    """symlog of the backward-smoothed ratio of net income to employees."""
    net = fin.wide("net_income")
    emp = fin.wide("employees")
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = net / emp
    ratio = ratio.where(emp > 0)
    smoothed = backward_mean(ratio, window)
    return pd.DataFrame(symlog(smoothed.to_numpy()), index=smoothed.index,
                        columns=smoothed.columns)


# ---------------------------------------------------------------------------
# design


@dataclass(frozen=True)
class RegressionSpec:
    dependent: str
    covariates: tuple = ("revenue", "coherence", "expy", "d_out", "d_in")
    t_star: int = 2015
    dt: int = 4
    sector_dummies: bool = True
    log1p_diversification: bool = False
    label: str = ""
    window: int = 3

    def __post_init__(self):
        if self.dependent not in DEPENDENTS:
            raise ValidationError(f"dependent must be one of {DEPENDENTS}")
        if self.dt < 1:
            raise ValidationError("dt must be positive")

    def term(self, variable):
        return f"log_{variable}" if variable in LOG_VARIABLES else variable


@dataclass(frozen=True, eq=False)
class VariablePanel:
    """Firm x year tables feeding the regressions.

    ``revenue``: operating revenue; ``ppe``: smoothed, symlog-transformed
    profit per employee; ``covariates``: yearly indicator tables by name.
    """

    revenue: pd.DataFrame
    ppe: pd.DataFrame
    covariates: dict = field(default_factory=dict)

    def smoothed(self, name, window=3):
        table = self.revenue if name == "revenue" else self.covariates[name]
        return backward_mean(table, window)

    def at(self, table, year, index):
        if year not in table.columns:
            return pd.Series(np.nan, index=index)
        return table[year].reindex(index)


@dataclass(frozen=True, eq=False)
class Design:
    X: pd.DataFrame
    y: pd.Series
    dropped: dict
    n_candidates: int
    reference_sector: int | None
    spec: RegressionSpec


def assemble_design(panel, spec, sectors):
    """Response and design matrix for one model at ``spec.t_star``.

    Covariates are backward means at ``t_star``; revenue, coherence and the
    diversification counts enter in logs, EXPY and average complexity raw.
    The design has an intercept and one dummy per sector except the lowest.
    Rows with any missing or out-of-domain field are dropped; ``dropped``
    counts rows by the first failing reason.
    """
    t, dt, w = spec.t_star, spec.dt, spec.window
    sectors = pd.Series(sectors)
    index = pd.Index(sorted(set(panel.revenue.index) | set(sectors.index)
                            | set().union(*[set(panel.covariates[c].index)
                                            for c in spec.covariates if c in panel.covariates])),
                     name="firm_id")
    reasons = pd.Series(None, index=index, dtype=object)

    def flag(mask, reason):
        mask = pd.Series(mask, index=index).fillna(False).astype(bool)
        reasons[mask & reasons.isna()] = reason

    if spec.dependent == "growth":
        g = growth(backward_mean(panel.revenue.reindex(index), w), t, dt)
        y = g["G"]
        for r in ("missing smoothed revenue", "nonpositive smoothed revenue"):
            flag(g["reason"] == r, f"growth: {r}")
    else:
        y = panel.at(panel.ppe, t + dt, index)
        flag(y.isna(), "missing profit per employee")

    columns = {}
    for name in spec.covariates:
        if name != "revenue" and name not in panel.covariates:
            raise ValidationError(f"unknown covariate {name!r}")
        value = panel.at(panel.smoothed(name, w), t, index)
        flag(value.isna(), f"missing {name}")
        if name in LOG_VARIABLES:
            if name in DIVERSIFICATION and spec.log1p_diversification:
                value = np.log1p(value.where(value >= 0))
            else:
                if name in DIVERSIFICATION:
                    flag(value == 0, "log of zero diversification")
                flag(value <= 0, f"log of nonpositive {name}")
                value = np.log(value.where(value > 0))
        columns[spec.term(name)] = value

    reference = None
    sec = sectors.reindex(index)
    if spec.sector_dummies:
        flag(sec.isna(), "missing sector")
    keep = reasons.isna()
    X = pd.DataFrame({"const": 1.0}, index=index)
    for k, v in columns.items():
        X[k] = v
    X = X[keep]
    y = y[keep]
    if spec.sector_dummies and keep.any():
        levels = np.sort(sec[keep].astype(np.int64).unique())
        reference = int(levels[0])
        s = sec[keep].astype(np.int64)
        for level in levels[1:]:
            X[f"sector_{level:02d}"] = (s == level).astype(np.float64)
    dropped = dict(sorted(Counter(reasons.dropna()).items()))
    return Design(X=X, y=y.rename(spec.dependent), dropped=dropped, n_candidates=len(index),
                  reference_sector=reference, spec=spec)


# ---------------------------------------------------------------------------
# estimation


def stars(p):
    if not np.isfinite(p):
        return ""
    if p < 0.01:
        return "***"
    if p < 0.05:
        return "**"
    if p < 0.1:
        return "*"
    return ""


@dataclass(frozen=True, eq=False)
class RegressionResult:
    names: tuple
    params: np.ndarray
    bse: np.ndarray
    tvalues: np.ndarray
    pvalues: np.ndarray
    cov: np.ndarray
    resid: np.ndarray
    nobs: int
    df_resid: int
    rsquared: float
    rsquared_adj: float
    dependent: str = ""
    dropped: dict = field(default_factory=dict)
    reference_sector: int | None = None

    def conf_int(self, alpha=0.05):
        q = stats.t.ppf(1 - alpha / 2, self.df_resid)
        return pd.DataFrame({"lower": self.params - q * self.bse,
                             "upper": self.params + q * self.bse}, index=list(self.names))

    def summary_frame(self):
        return pd.DataFrame({"estimate": self.params, "se_hc1": self.bse, "t": self.tvalues,
                             "p": self.pvalues}, index=pd.Index(self.names, name="term"))

    def __getitem__(self, term):
        i = self.names.index(term)
        return self.params[i]


def _check_rank(X, names):
    n, k = X.shape
    if n <= k:
        raise RankDeficientError(f"need more observations ({n}) than columns ({k})")
    _, R, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    tol = max(n, k) * np.finfo(np.float64).eps * (d[0] if len(d) else 0.0)
    rank = int((d > tol).sum())
    if rank < k:
        bad = [names[i] for i in sorted(piv[rank:])]
        raise RankDeficientError(f"design matrix is rank deficient; collinear columns: {bad}",
                                 columns=bad)


def ols_hc1(y, X, names=None, dependent=""):
    """OLS coefficients with HC1 heteroskedasticity-robust covariance.

    ``X`` must already contain any intercept column. p-values are two-sided
    from the t distribution with ``n - k`` degrees of freedom.
    """
    if isinstance(X, pd.DataFrame):
        names = tuple(X.columns) if names is None else tuple(names)
        X = X.to_numpy(dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValidationError("X must be 2-D with one row per response value")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValidationError("X and y must be finite")
    n, k = X.shape
    names = tuple(names) if names is not None else tuple(f"x{i}" for i in range(k))
    _check_rank(X, names)
    Q, R = np.linalg.qr(X)
    beta = scipy.linalg.solve_triangular(R, Q.T @ y)
    resid = y - X @ beta
    R_inv = scipy.linalg.solve_triangular(R, np.eye(k))
    bread = R_inv @ R_inv.T
    meat = (X * resid[:, None] ** 2).T @ X
    cov = n / (n - k) * bread @ meat @ bread
    bse = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        tvals = beta / bse
    pvals = 2.0 * stats.t.sf(np.abs(tvals), n - k)
    has_const = bool(np.any(np.all(X == X[0], axis=0) & (X[0] != 0)))
    ssr = float(resid @ resid)
    if has_const:
        tss = float(((y - y.mean()) ** 2).sum())
        r2 = 1.0 - ssr / tss if tss > 0 else float("nan")
        r2_adj = 1.0 - (1.0 - r2) * (n - 1) / (n - k)
    else:
        tss = float(y @ y)
        r2 = 1.0 - ssr / tss if tss > 0 else float("nan")
        r2_adj = 1.0 - (1.0 - r2) * n / (n - k)
    return RegressionResult(names=names, params=beta, bse=bse, tvalues=tvals, pvalues=pvals,
                            cov=cov, resid=resid, nobs=n, df_resid=n - k, rsquared=r2,
                            rsquared_adj=r2_adj, dependent=dependent)


def fit_design(design):
    """Estimate a :class:`Design`; carries deletion counts into the result."""
    if len(design.y) == 0:
        raise ComputeError(f"no observations left for {design.spec.dependent} "
                           f"(dropped: {design.dropped})")
    res = ols_hc1(design.y, design.X, dependent=design.spec.dependent)
    from dataclasses import replace
    return replace(res, dropped=design.dropped, reference_sector=design.reference_sector)


class OLSHC1(RegressorMixin, BaseEstimator):
    """Linear regression reporting HC1 robust standard errors.

    Attributes
    ----------
    coef_ : ndarray of shape (n_features,)
    intercept_ : float
    bse_ : ndarray
        Robust standard errors, intercept first when fitted.
    pvalues_ : ndarray
    rsquared_adj_ : float
    result_ : RegressionResult
    """

    def __init__(self, fit_intercept=True):
        self.fit_intercept = fit_intercept

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        names = [f"x{i}" for i in range(X.shape[1])]
        if self.fit_intercept:
            X = np.column_stack([np.ones(X.shape[0]), X])
            names = ["const"] + names
        res = ols_hc1(y, X, names)
        self.result_ = res
        self.intercept_ = float(res.params[0]) if self.fit_intercept else 0.0
        self.coef_ = res.params[1:] if self.fit_intercept else res.params
        self.bse_ = res.bse
        self.pvalues_ = res.pvalues
        self.rsquared_adj_ = res.rsquared_adj
        self.n_features_in_ = X.shape[1] - int(self.fit_intercept)
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        return X @ self.coef_ + self.intercept_


# ---------------------------------------------------------------------------
# reporting


def _fmt(x):
    return f"{x + 0.0:.3f}"


def regression_table(results, labels, term_labels=None, dummies_label="Sector dummies"):
    """Plain-text side-by-side regression table.

    Each coefficient row shows the estimate with significance stars and the
    robust standard error in parentheses underneath. Intercept and sector
    dummies are summarized by a single YES/NO row.
    """
    if len(results) != len(labels):
        raise ValidationError("one label per result is required")
    term_labels = {**TERM_LABELS, **(term_labels or {})}
    terms = []
    for res in results:
        for name in res.names:
            if name == "const" or name.startswith("sector_") or name in terms:
                continue
            terms.append(name)
    body = []
    for term in terms:
        coef_row, se_row = [term_labels.get(term, term)], [""]
        for res in results:
            if term in res.names:
                i = res.names.index(term)
                coef_row.append(_fmt(res.params[i]) + stars(res.pvalues[i]))
                se_row.append(f"({_fmt(res.bse[i])})")
            else:
                coef_row.append("")
                se_row.append("")
        body += [coef_row, se_row]
    body.append([""] * (len(results) + 1))
    body.append([dummies_label] + ["YES" if any(n.startswith("sector_") for n in r.names)
                                   or r.reference_sector is not None else "NO"
                                   for r in results])
    tail = [["Observations"] + [str(r.nobs) for r in results],
            ["Adjusted R-squared"] + [_fmt(r.rsquared_adj) for r in results]]
    header = [""] + list(labels)
    rows = [header] + body + tail
    w0 = max(len(r[0]) for r in rows)
    widths = [max(len(r[j]) for r in rows) for j in range(1, len(header))]

    def line(r):
        cells = [r[0].ljust(w0)] + [c.center(w) for c, w in zip(r[1:], widths)]
        return "  ".join(cells).rstrip()

    total = w0 + sum(w + 2 for w in widths)
    rule = "-" * total
    out = ["=" * total, line(header), rule]
    out += [line(r) for r in body]
    out.append(rule)
    out += [line(r) for r in tail]
    out.append("=" * total)
    out.append("Robust standard errors in parentheses (HC1). ***p<0.01, **p<0.05, *p<0.1.")
    return "\n".join(out) + "\n"


def results_frame(results, model_ids):
    """Machine-readable coefficients: term, estimate, se_hc1, p, stars, model_id."""
    frames = []
    for res, mid in zip(results, model_ids):
        f = pd.DataFrame({"term": list(res.names), "estimate": res.params, "se_hc1": res.bse,
                          "p": res.pvalues, "stars": [stars(p) for p in res.pvalues],
                          "model_id": mid})
        if res.reference_sector is not None:
            ref = pd.DataFrame({"term": [f"sector_{res.reference_sector:02d}[reference]"],
                                "estimate": [np.nan], "se_hc1": [np.nan], "p": [np.nan],
                                "stars": [""], "model_id": [mid]})
            f = pd.concat([f, ref], ignore_index=True)
        frames.append(f)
    return pd.concat(frames, ignore_index=True)


def model_summary_frame(results, model_ids, labels):
    return pd.DataFrame({
        "model_id": list(model_ids), "label": list(labels),
        "dependent": [r.dependent for r in results],
        "observations": [r.nobs for r in results],
        "r_squared": [r.rsquared for r in results],
        "adj_r_squared": [r.rsquared_adj for r in results],
        "dropped": [";".join(f"{k}={v}" for k, v in r.dropped.items()) for r in results],
    })
