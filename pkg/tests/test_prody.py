import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from firmcomplexity.exceptions import ComputeError, ValidationError
from firmcomplexity.ingest import GdpTable
from firmcomplexity.matrix import rca
from firmcomplexity.prody import ProdyEXPY, ProductScoreTable, expy, log_prody, zscore
from helpers import labeled
from oracles import rca_loops


def gdp_table(countries, gdp):
    return GdpTable(gdp_pc=pd.Series(np.asarray(gdp, dtype=float), index=countries))


def scores_of(z, cols):
    return ProductScoreTable(frame=pd.DataFrame(
        {"logprody_raw": z, "logprody_z": z}, index=pd.Index(cols, name="hs6")))


def prody_loops(E, log_gdp):
    R = rca_loops(E)
    out = []
    for p in range(R.shape[1]):
        mass = sum(R[c, p] for c in range(R.shape[0]))
        out.append(sum(R[c, p] * log_gdp[c] for c in range(R.shape[0])) / mass)
    return np.array(out)


def test_single_exporter_gets_its_log_gdp():
    E = labeled([[5, 0], [0, 3]], rows=["A", "B"])
    t = log_prody(rca(E), gdp_table(["A", "B"], [np.exp(9), np.exp(7)]))
    assert t.raw.iloc[0] == pytest.approx(9, abs=1e-12)


def test_two_countries_equal_rca():
    # both countries have RCA 1 on product 0
    E = labeled([[1, 1], [1, 1]], rows=["A", "B"])
    t = log_prody(rca(E), gdp_table(["A", "B"], [np.exp(8), np.exp(10)]))
    assert t.raw.iloc[0] == pytest.approx(9, abs=1e-12)


def test_zero_rca_country_leaves_value_unchanged():
    E = labeled([[5, 0, 1], [0, 3, 1]], rows=["A", "B"])
    t = log_prody(rca(E), gdp_table(["A", "B"], [np.exp(9), np.exp(7)]))
    assert t.raw.iloc[0] == pytest.approx(9, abs=1e-12)


def test_product_without_mass_excluded_with_warning():
    R = labeled([[1.0, 0.0], [2.0, 0.0]], rows=["A", "B"])
    with pytest.warns(UserWarning, match="zero RCA mass"):
        t = log_prody(R, gdp_table(["A", "B"], [1.0, 2.0]))
    assert list(t.frame.index) == ["000000"]


def test_missing_gdp_is_fatal():
    with pytest.raises(ValidationError):
        log_prody(rca(labeled([[1, 2]], rows=["A"])), gdp_table(["B"], [1.0]))


def test_zscore_examples():
    t = zscore(ProductScoreTable(frame=pd.DataFrame({"logprody_raw": [8.0, 10.0]},
                                                    index=["a", "b"])))
    assert t.z.tolist() == [-1.0, 1.0]
    assert (t.mean, t.std) == (9.0, 1.0)
    with pytest.raises(ComputeError):
        zscore(ProductScoreTable(frame=pd.DataFrame({"logprody_raw": [3.0, 3.0]})))
    with pytest.raises(ComputeError):
        zscore(ProductScoreTable(frame=pd.DataFrame({"logprody_raw": [3.0]})))


@given(arrays(np.float64, st.integers(2, 30), elements=st.floats(-50, 50)))
def test_zscore_mean_zero_std_one(x):
    if np.ptp(x) < 1e-6:
        return
    t = zscore(ProductScoreTable(frame=pd.DataFrame({"logprody_raw": x})))
    assert abs(t.z.mean()) < 1e-12
    assert t.z.std(ddof=0) == pytest.approx(1, abs=1e-10)


def test_expy_examples():
    s = scores_of([0.7, 1.0, -1.0, 2.0, -2.0], ["a", "b", "c", "d", "e"])
    E = labeled([[4, 0, 0, 0, 0], [0, 2, 2, 0, 0], [0, 0, 0, 3, 1]], cols=list("abcde"))
    out = expy(E, s).expy.to_numpy()
    np.testing.assert_allclose(out, [0.7, 0.0, 1.0], atol=1e-12)


def test_expy_rca_weights_and_validation():
    s = scores_of([1.0, -1.0], ["a", "b"])
    E = labeled([[2, 0], [1, 1]], cols=["a", "b"])
    out = expy(E, s, mode="rca")
    # RCA rows: [4/3, 0] and [2/3, 2]
    np.testing.assert_allclose(out.expy, [1.0, (2 / 3 - 2) / (2 / 3 + 2)], atol=1e-12)
    assert out.mode == "rca"
    with pytest.raises(ValidationError):
        expy(E, s, mode="other")
    with pytest.raises(ValidationError):
        expy(E, ProductScoreTable(frame=pd.DataFrame({"logprody_raw": [1.0, 2.0]},
                                                     index=["a", "b"])))


def test_expy_coverage_and_unscored_firm():
    s = scores_of([1.0], ["a"])
    E = labeled([[3, 1], [0, 2]], cols=["a", "b"])
    with pytest.warns(UserWarning, match="no scored exports"):
        out = expy(E, s)
    assert list(out.frame.index) == ["f0"]
    assert out.frame["coverage"].iloc[0] == pytest.approx(0.75)


baskets = arrays(np.float64, st.tuples(st.integers(1, 6), st.just(5)),
                 elements=st.sampled_from([0.0, 0.5, 1.0, 3.0, 10.0]))
score_vectors = arrays(np.float64, 5, elements=st.floats(-3, 3))


@given(baskets, score_vectors, st.floats(1e-3, 1e3))
def test_expy_bounds_and_scale_invariance(E, z, c):
    E = E[E.sum(axis=1) > 0]
    if len(E) == 0:
        return
    cols = list("abcde")
    s = scores_of(z, cols)
    a = expy(labeled(E, cols=cols), s).expy.to_numpy()
    b = expy(labeled(c * E, cols=cols), s).expy.to_numpy()
    np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)
    for i, row in enumerate(E):
        zs = z[row > 0]
        assert zs.min() - 1e-12 <= a[i] <= zs.max() + 1e-12


@given(baskets, score_vectors, st.floats(0.1, 100))
def test_expy_monotone_in_top_product_weight(E, z, extra):
    E = E[E.sum(axis=1) > 0]
    if len(E) == 0:
        return
    cols = list("abcde")
    s = scores_of(z, cols)
    before = expy(labeled(E, cols=cols), s).expy.to_numpy()
    bumped = E.copy()
    for i, row in enumerate(E):
        idx = np.flatnonzero(row > 0)
        bumped[i, idx[np.argmax(z[idx])]] += extra
    after = expy(labeled(bumped, cols=cols), s).expy.to_numpy()
    assert np.all(after >= before - 1e-12)


world = arrays(np.float64, st.tuples(st.integers(2, 6), st.integers(2, 6)),
               elements=st.floats(0.5, 100))


@given(world, st.integers(0, 2 ** 31), st.floats(1e-3, 1e3))
def test_prody_matches_loops_relabeling_and_gdp_scaling(E, seed, c):
    r = np.random.default_rng(seed)
    n = E.shape[0]
    countries = [f"C{i}" for i in range(n)]
    gdp = r.uniform(100, 1e5, n)
    t = log_prody(rca(labeled(E, rows=countries)), gdp_table(countries, gdp))
    np.testing.assert_allclose(t.raw, prody_loops(E, np.log(gdp)), rtol=1e-12)
    perm = r.permutation(n)
    t2 = log_prody(rca(labeled(E[perm], rows=[countries[i] for i in perm])),
                   gdp_table(countries, gdp))
    np.testing.assert_allclose(t2.raw, t.raw, rtol=1e-12)
    t3 = log_prody(rca(labeled(E, rows=countries)), gdp_table(countries, c * gdp))
    np.testing.assert_allclose(t3.raw, t.raw + np.log(c), rtol=1e-12, atol=1e-10)
    if np.ptp(t.raw) > 1e-6:
        np.testing.assert_allclose(zscore(t3).z, zscore(t).z, atol=1e-10)


def test_estimator_matches_functions(rng):
    W = rng.uniform(0.5, 10, size=(6, 5))
    gdp = rng.uniform(100, 1e4, 6)
    F = rng.integers(0, 4, size=(8, 5)).astype(float)
    F[:, 0] += 1
    est = ProdyEXPY().fit(W, np.log(gdp))
    countries = [f"C{i}" for i in range(6)]
    t = zscore(log_prody(rca(labeled(W, rows=countries)), gdp_table(countries, gdp)))
    np.testing.assert_allclose(est.zscores_, t.z, atol=1e-12)
    ref = expy(labeled(F), t).expy.to_numpy()
    np.testing.assert_allclose(est.transform(F).ravel(), ref, atol=1e-12)
    rca_est = ProdyEXPY(weights="rca").fit(W, np.log(gdp))
    ref = expy(labeled(F), t, mode="rca").expy.to_numpy()
    np.testing.assert_allclose(rca_est.transform(F).ravel(), ref, atol=1e-12)
    with pytest.raises(ValidationError):
        est.transform(F[:, :3])
    with pytest.raises(ValidationError):
        ProdyEXPY().fit(W, np.log(gdp[:3]))
