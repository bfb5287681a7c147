import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special, stats

from mobpheno.analysis import (
    EVENING, MIDDAY, MORNING, betainc, comparison_table, group_compare, jacobi_eigh,
    loadings_table, morning_evening_contrast, pca_fit, t_two_sided_p, variance_table, welch_t,
)
from mobpheno.ddp import DISPLACEMENT_LABELS
from mobpheno.errors import InsufficientSamples, MetricMissingForGroup


# -- eigen decomposition and PCA ----------------------------------------------

def test_jacobi_matches_numpy(rng):
    a = rng.normal(size=(20, 20))
    s = a @ a.T
    w, v, sweeps = jacobi_eigh(s)
    np.testing.assert_allclose(w, np.linalg.eigvalsh(s)[::-1], rtol=1e-10, atol=1e-9)
    np.testing.assert_allclose(v.T @ v, np.eye(20), atol=1e-10)
    np.testing.assert_allclose(s @ v, v * w, atol=1e-8)
    assert sweeps < 20


def test_jacobi_diagonal_input():
    w, v, sweeps = jacobi_eigh(np.diag([1.0, 3.0, 2.0]))
    assert w.tolist() == [3.0, 2.0, 1.0] and sweeps == 0


def test_pca_integrity(rng):
    x = rng.exponential(200, (500, 47)) * rng.uniform(0.2, 3, 47)
    m = pca_fit(x, k=47)
    off = m.loadings.T @ m.loadings - np.eye(47)
    assert np.abs(off).max() < 1e-8
    assert abs(m.explained_variance_ratio.sum() - 1.0) < 1e-9
    recon = m.inverse_transform(m.scores)
    assert np.abs(recon - x).max() < 1e-6
    np.testing.assert_allclose(m.eigenvalues, np.linalg.eigvalsh(np.cov(x.T))[::-1],
                               rtol=1e-9, atol=1e-6)


def test_pca_sign_convention_and_repeatability(rng):
    x = rng.normal(size=(300, 47)) @ rng.normal(size=(47, 47))
    first = pca_fit(x, k=10).loadings
    idx = np.argmax(np.abs(first), axis=0)
    assert np.all(first[idx, np.arange(10)] > 0)
    for _ in range(3):
        assert np.array_equal(pca_fit(x, k=10).loadings, first)


def test_pca_collinear_data(rng):
    t = rng.normal(size=200)
    x = np.zeros((200, 47))
    x[:, 3] = t
    x[:, 9] = 2 * t
    m = pca_fit(x, k=5)
    assert m.explained_variance_ratio[0] == pytest.approx(1.0)
    assert np.allclose(m.explained_variance_ratio[1:], 0, atol=1e-12)


def test_pca_correlation_mode(rng):
    x = rng.normal(size=(100, 47)) * np.arange(1, 48)
    m = pca_fit(x, k=47, correlation=True)
    assert m.eigenvalues.sum() == pytest.approx(47.0)


def test_pca_tables(rng):
    m = pca_fit(rng.normal(size=(60, 47)), k=10)
    lt = loadings_table(m)
    assert list(lt.columns) == ["pc", *DISPLACEMENT_LABELS] and len(lt) == 10
    vt = variance_table(m)
    assert vt["cumulative_ratio"].is_monotonic_increasing


def test_morning_evening_contrast():
    l = np.zeros((47, 2))
    l[MORNING + EVENING, 0] = 1.0
    l[MIDDAY, 0] = -1.0
    l[:, 1] = 1.0
    c = morning_evening_contrast(l)
    assert c["contrasting"].tolist() == [True, False]


# -- t distribution -----------------------------------------------------------

@settings(max_examples=200, deadline=None)
@given(st.floats(0.05, 200), st.floats(0.05, 200), st.floats(0, 1))
def test_betainc_matches_scipy(a, b, x):
    assert betainc(a, b, x) == pytest.approx(special.betainc(a, b, x), rel=1e-9, abs=1e-13)


@settings(max_examples=200, deadline=None)
@given(st.floats(-50, 50), st.floats(1, 5000))
def test_t_p_matches_scipy(t, df):
    assert t_two_sided_p(t, df) == pytest.approx(2 * stats.t.sf(abs(t), df), rel=1e-8, abs=1e-15)


def test_welch_reference_example():
    r = welch_t([10, 12, 14, 16], [11, 13, 15, 17])
    assert r.t_statistic == pytest.approx(-0.5477, abs=1e-4)
    assert r.degrees_freedom == pytest.approx(6.0)
    assert r.p_value == pytest.approx(0.604, abs=1e-3)


def test_welch_matches_scipy(rng):
    for _ in range(50):
        a = rng.normal(0, rng.uniform(0.5, 3), rng.integers(2, 40))
        b = rng.normal(0.3, rng.uniform(0.5, 3), rng.integers(2, 40))
        ours = welch_t(a, b)
        ref = stats.ttest_ind(a, b, equal_var=False)
        assert ours.t_statistic == pytest.approx(ref.statistic, rel=1e-10)
        assert ours.p_value == pytest.approx(ref.pvalue, rel=1e-8)


def test_welch_identical_and_swapped():
    r = welch_t([1, 2, 3], [1, 2, 3])
    assert r.t_statistic == 0 and r.p_value == 1
    a, b = [1.0, 4.0, 2.0, 8.0], [3.0, 3.5, 9.0]
    f, g = welch_t(a, b), welch_t(b, a)
    assert f.t_statistic == -g.t_statistic and f.p_value == g.p_value


def test_welch_zero_variance():
    same = welch_t([2, 2], [2, 2, 2])
    assert same.p_value == 1.0 and same.degenerate
    diff = welch_t([2, 2], [3, 3])
    assert diff.p_value == 0.0 and diff.degenerate


def test_welch_needs_two():
    with pytest.raises(InsufficientSamples):
        welch_t([1.0], [1.0, 2.0])


# -- group comparison -----------------------------------------------------------

def _table():
    return pd.DataFrame({
        "participant_id": ["a", "a", "b", "b", "c", "d", "d"],
        "group": ["PRE", "PRE", "PRE", "PRE", "POST", "POST", "POST"],
        "x": [1.0, 3.0, 2.0, 2.0, 5.0, 6.0, 8.0],
    })


def test_group_compare_day_and_participant():
    r = group_compare(_table(), "x", "day")
    ref = welch_t([5.0, 6.0, 8.0], [1.0, 3.0, 2.0, 2.0])
    assert (r.mean_post, r.mean_pre, r.t, r.p) == (ref.mean_a, ref.mean_b, ref.t_statistic, ref.p_value)
    rp = group_compare(_table(), "x", "participant")
    assert rp.mean_post == 6.0 and rp.mean_pre == 2.0 and rp.n_post == 2


def test_group_compare_missing():
    with pytest.raises(MetricMissingForGroup):
        group_compare(_table(), "y")
    t = _table()
    t.loc[t.group == "POST", "x"] = np.nan
    with pytest.raises(MetricMissingForGroup):
        group_compare(t, "x")


def test_report_column_order():
    df = comparison_table([group_compare(_table(), "x")])
    assert list(df.columns) == ["metric", "granularity", "mean_post", "mean_pre", "t", "df", "p"]
