import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from firmcomplexity.econometrics import (OLSHC1, RegressionSpec, VariablePanel, assemble_design,
                                         backward_mean, fit_design, growth, ols_hc1,
                                         profit_per_employee, regression_table, results_frame,
                                         stars, symlog)
from firmcomplexity.exceptions import ComputeError, RankDeficientError, ValidationError
from firmcomplexity.ingest import FinancialPanel
from oracles import ols_hc1_normal_equations

YEARS = list(range(2008, 2020))
COVS = ("coherence", "expy", "d_out", "d_in")


def series(values, start=2010):
    return pd.Series(values, index=range(start, start + len(values)), dtype=float)


# ---------------------------------------------------------------------------
# yearly transforms


def test_backward_mean_examples():
    assert backward_mean(series([5, 5, 5, 5])).dropna().tolist() == [5, 5]
    assert backward_mean(series([1, 2, 3]))[2012] == 2
    s = series([1, np.nan, 3, 4, 5])
    out = backward_mean(s)
    assert np.isnan(out[2012]) and np.isnan(out[2013]) and out[2014] == 4
    assert np.isnan(backward_mean(series([1, 2]))).all()


def test_backward_mean_fills_absent_years_as_missing():
    wide = pd.DataFrame({2010: [1.0], 2011: [2.0], 2013: [4.0], 2014: [5.0]}, index=["f"])
    out = backward_mean(wide)
    assert list(out.columns) == [2010, 2011, 2012, 2013, 2014]
    assert out.isna().all(axis=None)


def test_growth_examples():
    g = growth(series([10, 10, 10, 10, 10]), 2010)
    assert g["G"].iloc[0] == 0
    g = growth(series([10, 0, 0, 0, 20]), 2010)
    assert g["G"].iloc[0] == pytest.approx(np.log(2), abs=1e-15)
    g = growth(series([10, 10, 10]), 2010)
    assert np.isnan(g["G"].iloc[0]) and g["reason"].iloc[0] == "missing smoothed revenue"
    g = growth(series([-1, 0, 0, 0, 3]), 2010)
    assert g["reason"].iloc[0] == "nonpositive smoothed revenue"


@given(arrays(np.float64, 9, elements=st.floats(0.1, 1e6)), st.integers(1, 4), st.integers(1, 4))
def test_growth_log_ratio_additivity(v, a, b):
    s = series(v)
    t = 2010
    lhs = growth(s, t, a)["G"].iloc[0] + growth(s, t + a, b)["G"].iloc[0]
    assert lhs == pytest.approx(growth(s, t, a + b)["G"].iloc[0], abs=1e-12)


@given(st.floats(-1e6, 1e6))
def test_symlog_is_odd(x):
    assert symlog(-x) == pytest.approx(-symlog(x), abs=0)


def test_symlog_examples():
    assert symlog(0.0) == 0
    assert symlog(np.e - 1) == pytest.approx(1, abs=1e-15)
    assert symlog(-(np.e - 1)) == pytest.approx(-1, abs=1e-15)


def test_profit_per_employee_examples():
    rows = []
    for y in range(2010, 2013):
        rows.append(("zero", y, 5.0, 10.0, 0.0))
        rows.append(("const", y, 4.0, 10.0, 100.0))
        rows.append(("gap", y, np.nan if y == 2011 else 2.0, 10.0, 1.0))
    frame = pd.DataFrame(rows, columns=["firm_id", "year", "employees", "operating_revenue",
                                        "net_income"])
    ppe = profit_per_employee(FinancialPanel(frame=frame))
    assert ppe.loc["zero", 2012] == 0
    assert ppe.loc["const", 2012] == pytest.approx(symlog(25.0), abs=1e-15)
    assert np.isnan(ppe.loc["gap", 2012])


# ---------------------------------------------------------------------------
# design


def make_panel(n=100, seed=0, n_sectors=21):
    r = np.random.default_rng(seed)
    firms = [f"f{i:03d}" for i in range(n)]
    rev = pd.DataFrame(np.exp(r.normal(10, 1, (n, len(YEARS)))), index=firms, columns=YEARS)
    covs = {
        "coherence": pd.DataFrame(r.uniform(0.05, 1, (n, len(YEARS))), index=firms, columns=YEARS),
        "expy": pd.DataFrame(r.normal(0, 1, (n, len(YEARS))), index=firms, columns=YEARS),
        "d_out": pd.DataFrame(r.integers(1, 9, (n, len(YEARS))).astype(float), index=firms,
                              columns=YEARS),
        "d_in": pd.DataFrame(r.integers(1, 9, (n, len(YEARS))).astype(float), index=firms,
                             columns=YEARS),
    }
    ppe = pd.DataFrame(r.normal(0, 2, (n, len(YEARS))), index=firms, columns=YEARS)
    sectors = pd.Series(np.arange(n) % n_sectors + 1, index=firms)
    return VariablePanel(revenue=rev, ppe=ppe, covariates=covs), sectors


def test_complete_panel_keeps_every_firm():
    panel, sectors = make_panel()
    d = assemble_design(panel, RegressionSpec("growth"), sectors)
    assert len(d.y) == 100 and d.dropped == {}
    dummies = [c for c in d.X.columns if c.startswith("sector_")]
    assert len(dummies) == 20 and d.reference_sector == 1
    assert list(d.X.columns[:6]) == ["const", "log_revenue", "log_coherence", "expy",
                                     "log_d_out", "log_d_in"]
    res = fit_design(d)
    assert res.nobs == 100 and len(res.names) == 26


def test_design_values_are_backward_means_at_t_star():
    panel, sectors = make_panel(n=30)
    d = assemble_design(panel, RegressionSpec("growth"), sectors)
    f = "f007"
    rev = panel.revenue.loc[f]
    assert d.X.loc[f, "log_revenue"] == pytest.approx(np.log(rev[[2013, 2014, 2015]].mean()))
    assert d.y[f] == pytest.approx(np.log(rev[[2017, 2018, 2019]].mean()
                                          / rev[[2013, 2014, 2015]].mean()))
    assert d.X.loc[f, "expy"] == pytest.approx(
        panel.covariates["expy"].loc[f, [2013, 2014, 2015]].mean())
    d2 = assemble_design(panel, RegressionSpec("profit_per_employee"), sectors)
    assert d2.y[f] == panel.ppe.loc[f, 2019]


def test_zero_diversification_row_dropped_with_reason():
    panel, sectors = make_panel()
    panel.covariates["d_in"].loc["f003", [2013, 2014, 2015]] = 0.0
    d = assemble_design(panel, RegressionSpec("growth"), sectors)
    assert len(d.y) == 99 and "f003" not in d.y.index
    assert d.dropped == {"log of zero diversification": 1}
    d1p = assemble_design(panel, RegressionSpec("growth", log1p_diversification=True), sectors)
    assert len(d1p.y) == 100 and d1p.X.loc["f003", "log_d_in"] == 0


def test_missing_fields_counted_by_first_reason():
    panel, sectors = make_panel()
    panel.revenue.loc["f001", 2018] = np.nan
    panel.covariates["coherence"].loc["f002", 2014] = np.nan
    sectors = sectors.drop("f004")
    d = assemble_design(panel, RegressionSpec("growth"), sectors)
    assert d.dropped == {"growth: missing smoothed revenue": 1, "missing coherence": 1,
                         "missing sector": 1}
    assert len(d.y) == 97
    with pytest.raises(ValidationError):
        assemble_design(panel, RegressionSpec("growth", covariates=("nope",)), sectors)
    with pytest.raises(ValidationError):
        RegressionSpec("sales")


def test_without_dummies_and_rank_failure():
    panel, sectors = make_panel()
    d = assemble_design(panel, RegressionSpec("growth", sector_dummies=False), sectors)
    assert not any(c.startswith("sector_") for c in d.X.columns)
    assert d.reference_sector is None
    panel.covariates["d_out"] = panel.covariates["d_in"].copy()
    with pytest.raises(RankDeficientError) as err:
        fit_design(assemble_design(panel, RegressionSpec("growth"), sectors))
    assert set(err.value.columns) & {"log_d_out", "log_d_in"}


# ---------------------------------------------------------------------------
# OLS


def test_exact_fit():
    x = np.arange(10.0)
    res = ols_hc1(1 + 2 * x, np.column_stack([np.ones(10), x]))
    np.testing.assert_allclose(res.params, [1, 2], atol=1e-12)
    np.testing.assert_allclose(res.resid, 0, atol=1e-12)
    np.testing.assert_allclose(res.bse, 0, atol=1e-12)


def test_six_point_heteroskedastic_oracle():
    x = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
    y = np.array([1.1, 2.3, 2.8, 4.9, 4.2, 7.5])
    X = np.column_stack([np.ones(6), x])
    res = ols_hc1(y, X)
    beta, se, e = ols_hc1_normal_equations(y, X)
    np.testing.assert_allclose(res.params, beta, atol=1e-10)
    np.testing.assert_allclose(res.bse, se, atol=1e-10)
    np.testing.assert_allclose(res.resid, e, atol=1e-10)
    assert 0 <= res.pvalues.min() and res.pvalues.max() <= 1


def test_duplicated_column_is_fatal():
    x = np.arange(8.0)
    with pytest.raises(RankDeficientError, match="x2"):
        ols_hc1(x, np.column_stack([np.ones(8), x, x]))
    with pytest.raises(RankDeficientError):
        ols_hc1(x[:2], np.column_stack([np.ones(2), x[:2]]))


@given(st.integers(0, 2 ** 31), st.floats(-100, 100))
def test_residual_orthogonality_and_intercept_shift(seed, c):
    r = np.random.default_rng(seed)
    X = np.column_stack([np.ones(40), r.normal(size=(40, 3))])
    y = X @ r.normal(size=4) + r.normal(size=40) * (1 + np.abs(X[:, 1]))
    a = ols_hc1(y, X)
    assert np.max(np.abs(X.T @ a.resid)) < 1e-10
    b = ols_hc1(y + c, X)
    assert b.params[0] == pytest.approx(a.params[0] + c, abs=1e-9)
    np.testing.assert_allclose(b.params[1:], a.params[1:], atol=1e-10)
    np.testing.assert_allclose(b.bse, a.bse, atol=1e-10)


def test_hc1_under_equal_residual_magnitudes():
    # e is orthogonal to [1, x] and has constant |e| = 0.5
    x = np.arange(1.0, 9.0)
    e = 0.5 * np.array([1, -1, -1, 1, -1, 1, 1, -1])
    X = np.column_stack([np.ones(8), x])
    res = ols_hc1(2 + 3 * x + e, X)
    n, k = X.shape
    sigma_ml = np.sqrt(e @ e / n)
    classical_ml = sigma_ml * np.sqrt(np.diag(np.linalg.inv(X.T @ X)))
    np.testing.assert_allclose(res.bse, classical_ml * np.sqrt(n / (n - k)), atol=1e-12)
    # equivalently, the classical SE with the unbiased variance SSR / (n - k)
    classical = np.sqrt(e @ e / (n - k) * np.diag(np.linalg.inv(X.T @ X)))
    np.testing.assert_allclose(res.bse, classical, atol=1e-12)


def test_matches_statsmodels():
    sm = pytest.importorskip("statsmodels.api")
    r = np.random.default_rng(4)
    X = np.column_stack([np.ones(200), r.normal(size=(200, 3))])
    y = X @ [1, 0.5, -0.2, 0] + r.normal(size=200) * (1 + X[:, 1] ** 2)
    ours = ols_hc1(y, X)
    ref = sm.OLS(y, X).fit(cov_type="HC1", use_t=True)
    np.testing.assert_allclose(ours.params, ref.params, atol=1e-10)
    np.testing.assert_allclose(ours.bse, ref.bse, atol=1e-10)
    np.testing.assert_allclose(ours.pvalues, ref.pvalues, atol=1e-10)
    assert ours.rsquared_adj == pytest.approx(ref.rsquared_adj, abs=1e-12)


def test_estimator_api(rng):
    X = rng.normal(size=(50, 2))
    y = 1 + X @ [2.0, -1.0] + 0.1 * rng.normal(size=50)
    est = OLSHC1().fit(X, y)
    assert est.intercept_ == pytest.approx(est.result_.params[0])
    np.testing.assert_allclose(est.predict(X), X @ est.coef_ + est.intercept_)
    assert est.score(X, y) > 0.9
    assert len(OLSHC1(fit_intercept=False).fit(X, y).coef_) == 2


def test_no_observations_is_compute_error():
    panel, sectors = make_panel(n=5)
    panel.revenue.loc[:, :] = np.nan
    with pytest.raises(ComputeError, match="no observations"):
        fit_design(assemble_design(panel, RegressionSpec("growth"), sectors))


# ---------------------------------------------------------------------------
# reporting


@pytest.mark.parametrize("p,expected", [(0.004, "***"), (0.01, "**"), (0.03, "**"),
                                        (0.07, "*"), (0.1, ""), (0.5, ""), (np.nan, "")])
def test_star_bands(p, expected):
    assert stars(p) == expected


def two_results():
    panel, sectors = make_panel(n=120, seed=2)
    g = fit_design(assemble_design(panel, RegressionSpec("growth"), sectors))
    p = fit_design(assemble_design(panel, RegressionSpec("profit_per_employee"), sectors))
    return g, p


def test_table_layout_two_columns():
    g, p = two_results()
    text = regression_table([g, p], ["Growth", "Profit per employee"])
    lines = text.splitlines()
    assert lines[0] == "=" * len(lines[0]) and lines[-2] == lines[0]
    assert "Growth" in lines[1] and "Profit per employee" in lines[1]
    assert any(line.startswith("log Operative Revenue") for line in lines)
    assert any(line.startswith("Sector dummies") and line.split()[-2:] == ["YES", "YES"]
               for line in lines)
    obs = [line for line in lines if line.startswith("Observations")][0]
    assert obs.split()[1:] == [str(g.nobs), str(p.nobs)]
    assert regression_table([g, p], ["Growth", "Profit per employee"]) == text
    with pytest.raises(ValidationError):
        regression_table([g], ["a", "b"])


def test_results_frame_columns_and_reference():
    g, p = two_results()
    df = results_frame([g, p], ["growth", "ppe"])
    assert list(df.columns) == ["term", "estimate", "se_hc1", "p", "stars", "model_id"]
    assert (df["term"] == "sector_01[reference]").sum() == 2
    row = df[(df.model_id == "growth") & (df.term == "expy")].iloc[0]
    assert row.estimate == g["expy"]
