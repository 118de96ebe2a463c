import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from ngcausal.exceptions import ConfigurationError, InputError
from ngcausal.stats import benjamini_hochberg, holm_bonferroni, ols_fit, one_sample_t, paired_t, rm_anova

FIX = Path(__file__).parent / "fixtures"
EXPECTED = json.loads((FIX / "stats_expected.json").read_text())
TOL = dict(rel=1e-8, abs=1e-12)

finite = st.floats(-100, 100, allow_nan=False)


def table(name):
    return pd.read_csv(FIX / name)


# --- fixtures from the high-precision oracle ------------------------------------------------


@pytest.mark.parametrize("csv, key", [("rm_anova_5x3.csv", "rm_anova_5x3"), ("indexes_8x4.csv", "rm_anova_8x4")])
def test_rm_anova_fixture(csv, key):
    res = rm_anova(table(csv))
    exp = EXPECTED[key]
    assert res.statistic == pytest.approx(exp["F"], **TOL)
    assert list(res.df) == exp["df"]
    assert res.p_raw == pytest.approx(exp["p"], **TOL)
    assert res.effect_size == pytest.approx(exp["eta_p2"], **TOL)


def test_paired_t_fixture():
    df = table("paired_10.csv")
    res = paired_t(df["a"], df["b"])
    exp = EXPECTED["paired_10"]
    assert (res.statistic, res.p_raw, res.effect_size) == (
        pytest.approx(exp["t"], **TOL), pytest.approx(exp["p"], **TOL), pytest.approx(exp["d"], **TOL))
    assert res.df == (exp["df"],)


@pytest.mark.parametrize("key, tail", [("one_sample_16", "greater"), ("one_sample_16_two", "two")])
def test_one_sample_fixture(key, tail):
    res = one_sample_t(table("one_sample_16.csv")["x"], mu=0.015, tail=tail)
    exp = EXPECTED[key]
    assert res.statistic == pytest.approx(exp["t"], **TOL)
    assert res.p_raw == pytest.approx(exp["p"], **TOL)
    assert res.effect_size == pytest.approx(exp["d"], **TOL)


def test_corrections_fixture():
    p = EXPECTED["pvalues"]
    np.testing.assert_allclose(holm_bonferroni(p), EXPECTED["holm"], rtol=1e-8)
    np.testing.assert_allclose(benjamini_hochberg(p), EXPECTED["bh"], rtol=1e-8)


def test_ols_fixture():
    df = table("ols_12.csv")
    res = ols_fit(df["outcome"], df["predictor"])
    exp = EXPECTED["ols_12"]
    for attr, key in [("slope", "slope"), ("intercept", "intercept"), ("r2", "r2"), ("F", "F"), ("p_value", "p")]:
        assert getattr(res, attr) == pytest.approx(exp[key], rel=1e-10)
    # normal equations
    X = np.column_stack([np.ones(len(df)), df["predictor"]])
    beta = np.linalg.solve(X.T @ X, X.T @ df["outcome"].to_numpy())
    np.testing.assert_allclose([res.intercept, res.slope], beta, rtol=1e-10)


# --- small worked examples -------------------------------------------------------------------


def test_rm_anova_degenerate_when_no_error_variance():
    res = rm_anova(np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]))
    assert res.degenerate and np.isnan(res.statistic)


def test_rm_anova_input_errors():
    with pytest.raises(InputError):
        rm_anova(np.array([[1.0, np.nan], [2.0, 3.0]]))
    with pytest.raises(InputError):
        rm_anova(np.ones((1, 3)))


def test_rm_anova_accepts_mapping_and_column_subset():
    df = table("indexes_8x4.csv")
    a = rm_anova(df, columns=["pp", "bb"])
    b = rm_anova({"pp": df["pp"].to_numpy(), "bb": df["bb"].to_numpy()})
    assert a.statistic == pytest.approx(b.statistic, rel=1e-12)


def test_paired_t_equal_samples():
    res = paired_t([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert res.statistic == 0 and res.p_raw == 1


def test_paired_t_constant_difference_is_degenerate():
    res = paired_t([2.0, 3.0, 4.0], [1.0, 2.0, 3.0])
    assert res.degenerate and res.statistic == np.inf


def test_paired_t_length_mismatch():
    with pytest.raises(InputError):
        paired_t([1.0, 2.0], [1.0])


def test_one_sample_mean_equals_mu():
    assert one_sample_t([1.0, 2.0, 3.0], mu=2.0).statistic == 0


def test_tail_validation_and_alias():
    x = [0.1, 0.4, 0.3, 0.5]
    assert one_sample_t(x, tail="one").p_raw == one_sample_t(x, tail="greater").p_raw
    with pytest.raises(ConfigurationError):
        one_sample_t(x, tail="left")


def test_holm_and_bh_examples():
    np.testing.assert_allclose(holm_bonferroni([0.01, 0.04]), [0.02, 0.04])
    np.testing.assert_allclose(benjamini_hochberg([0.01, 0.02, 0.03, 0.04]), [0.04] * 4)
    for f in (holm_bonferroni, benjamini_hochberg):
        assert f([0.3])[0] == 0.3
        np.testing.assert_array_equal(f([1.0, 1.0, 1.0]), 1.0)
    np.testing.assert_allclose(benjamini_hochberg([0.2] * 5), 0.2)


def test_corrections_keep_nan_in_place():
    out = holm_bonferroni([0.01, np.nan, 0.04])
    assert np.isnan(out[1])
    np.testing.assert_allclose(out[[0, 2]], [0.02, 0.04])
    with pytest.raises(InputError):
        benjamini_hochberg([0.5, 1.5])


def test_ols_examples(rng):
    x = np.arange(10.0)
    assert ols_fit(3 * x + 1, x).r2 == pytest.approx(1.0)
    noise = rng.normal(size=2000)
    assert ols_fit(noise, rng.normal(size=2000)).r2 < 0.01
    with pytest.raises(InputError):
        ols_fit([1.0, 2.0, 3.0], [1.0, 1.0, 1.0])


# --- properties ------------------------------------------------------------------------------


@given(arrays(np.float64, (6, 2), elements=finite))
def test_two_condition_anova_is_squared_paired_t(x):
    res_f = rm_anova(x)
    res_t = paired_t(x[:, 0], x[:, 1])
    if res_f.degenerate or res_t.degenerate or res_t.statistic == 0:
        return
    assert res_f.statistic == pytest.approx(res_t.statistic ** 2, rel=1e-8)
    assert res_f.p_raw == pytest.approx(res_t.p_raw, rel=1e-8, abs=1e-14)


@given(arrays(np.float64, (5, 3), elements=finite), finite, st.floats(0.1, 10))
def test_anova_invariant_to_affine_maps(x, shift, scale):
    a, b = rm_anova(x), rm_anova(scale * x + shift)
    if a.degenerate or b.degenerate or not np.isfinite(a.statistic) or a.statistic > 1e8:
        return
    assert b.statistic == pytest.approx(a.statistic, rel=1e-6)


@given(arrays(np.float64, st.integers(1, 20), elements=st.floats(0, 1)))
def test_adjusted_pvalues_dominate_and_preserve_order(p):
    for f in (holm_bonferroni, benjamini_hochberg):
        adj = f(p)
        assert np.all(adj >= p - 1e-15) and np.all(adj <= 1)
        order = np.argsort(p, kind="stable")
        assert np.all(np.diff(adj[order]) >= -1e-15)
    assert np.all(holm_bonferroni(p) >= benjamini_hochberg(p) - 1e-15)


@given(arrays(np.float64, 8, elements=finite), st.floats(-50, 50))
def test_one_sample_t_sign_follows_mean(x, mu):
    res = one_sample_t(x, mu)
    if res.degenerate or res.statistic == 0:
        return
    assert np.sign(res.statistic) == np.sign(np.mean(x) - mu)
    greater = one_sample_t(x, mu, tail="greater").p_raw
    less = one_sample_t(x, mu, tail="less").p_raw
    assert greater + less == pytest.approx(1.0)
    assert 2 * min(greater, less) == pytest.approx(res.p_raw, rel=1e-9)


@given(arrays(np.float64, 7, elements=finite), arrays(np.float64, 7, elements=finite))
def test_paired_t_is_antisymmetric(a, b):
    ab, ba = paired_t(a, b), paired_t(b, a)
    if ab.degenerate:
        return
    assert ab.statistic == -ba.statistic
    assert ab.p_raw == ba.p_raw


@given(arrays(np.float64, (6, 4), elements=finite), arrays(np.float64, 6, elements=finite))
def test_rm_anova_ignores_subject_offsets(x, offsets):
    a, b = rm_anova(x), rm_anova(x + offsets[:, None])
    if a.degenerate or b.degenerate:
        return
    assert b.statistic == pytest.approx(a.statistic, rel=1e-9, abs=1e-9)


@given(arrays(np.float64, 9, elements=finite), st.floats(-10, 10), st.floats(0.01, 100))
def test_one_sample_t_scale_invariant(x, mu, c):
    a = one_sample_t(x, mu)
    b = one_sample_t(mu + c * (x - mu), mu)
    if a.degenerate or b.degenerate:
        return
    assert b.statistic == pytest.approx(a.statistic, rel=1e-9, abs=1e-9)
