import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mdag.estimate import (
    GRID,
    CcrcEstimate,
    Design,
    FactorModel,
    GFormulaPlan,
    GridMismatch,
    InsufficientRows,
    RankDeficient,
    Separation,
    fit,
    gcompute,
    impute_mi,
    mc_interval,
    pool,
)
from mdag.scm import Dataset

from oracles import logistic_grid_mle


def _expit(x):
    return 1 / (1 + np.exp(-x))


def test_noiseless_linear_exact():
    rng = np.random.default_rng(0)
    X = np.column_stack([np.ones(50), rng.normal(size=(50, 2))])
    y = X @ np.array([1.0, -2.0, 0.5])
    m = fit("linear", y, X)
    assert np.allclose(m.coef, [1.0, -2.0, 0.5], atol=1e-10)
    assert m.sigma < 1e-10


def test_logistic_matches_grid_mle():
    rng = np.random.default_rng(1)
    x = rng.normal(size=200)
    y = (rng.random(200) < _expit(-0.4 + 1.1 * x)).astype(float)
    m = fit("logistic", y, np.column_stack([np.ones(200), x]))
    assert np.all(np.abs(m.coef - logistic_grid_mle(y, x)) < 1e-4)
    assert m.converged and not m.separation


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))
def test_logistic_grid_mle_property(seed, b0, b1):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=200)
    y = (rng.random(200) < _expit(b0 + b1 * x)).astype(float)
    if y.min() == y.max():
        return
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        m = fit("logistic", y, np.column_stack([np.ones(200), x]))
    if m.separation or np.any(np.abs(m.coef) > 2.9):
        return
    assert np.all(np.abs(m.coef - logistic_grid_mle(y, x)) < 1e-4)


def test_separation_flagged():
    x = np.linspace(-1, 1, 60)
    y = (x > 0).astype(float)
    with pytest.warns(Separation):
        m = fit("logistic", y, np.column_stack([np.ones(60), x]))
    assert m.separation


def test_rank_deficient_and_insufficient_rows():
    x = np.arange(40.0)
    with pytest.raises(RankDeficient):
        fit("linear", x, np.column_stack([np.ones(40), x, 2 * x]))
    with pytest.raises(InsufficientRows):
        fit("linear", x[:10], np.column_stack([np.ones(10), x[:10]]))


def test_multinomial_recovers_probabilities():
    rng = np.random.default_rng(2)
    y = rng.choice([1.0, 2.0, 3.0], size=6000, p=[0.2, 0.5, 0.3])
    m = fit("multinomial", y, np.ones((6000, 1)))
    p = m.predict(np.ones((1, 1)))[0]
    assert m.levels == (1.0, 2.0, 3.0)
    assert np.allclose(p, [np.mean(y == k) for k in (1, 2, 3)], atol=1e-6)


def test_design_dummies_and_transforms():
    d = Design(("C", "EFV_6"), {"C": (1, 2, 3)}, {"EFV": np.sqrt})
    cols = {"C": np.array([1.0, 2, 3]), "EFV_6": np.array([4.0, 9, 16])}
    X = d.matrix(cols, 3)
    assert d.names == ("(Intercept)", "C=2", "C=3", "EFV_6")
    assert np.array_equal(X, [[1, 0, 0, 2], [1, 1, 0, 3], [1, 0, 1, 4]])
    coef = np.array([0.1, 0.2, 0.3, 0.4])
    assert np.allclose(d.linear_predictor(cols, coef, 3), X @ coef)


# -- g-computation on a toy with a known answer --------------------------------------------------


def _toy(n, seed, effect=1.0):
    rng = np.random.default_rng(seed)
    L = rng.normal(size=n)
    A = L + rng.normal(size=n)
    Y = (rng.random(n) < _expit(-0.5 + effect * (-0.8) * A + 0.7 * L)).astype(float)
    return Dataset({"L": L, "A": A, "Y": Y}), rng


PLAN = GFormulaPlan(("L",), (FactorModel("Y", ("A", "L"), "logistic"),), ("A",), "Y")


def test_gcompute_matches_analytic_truth():
    d, _ = _toy(20_000, 3)
    grid = np.array([0.0, 1.0, 2.0])
    est = gcompute(d, PLAN, grid, mc_draws=20_000, seed=1)
    L = np.random.default_rng(9).normal(size=400_000)
    truth = [_expit(-0.5 - 0.8 * a + 0.7 * L).mean() for a in grid]
    assert np.max(np.abs(est.values - truth)) < 0.02


def test_null_effect_curve_is_flat():
    d, _ = _toy(5000, 4, effect=0.0)
    est = gcompute(d, PLAN, GRID, mc_draws=5000, seed=2)
    assert np.ptp(est.values) < 0.05


def test_gcompute_is_seeded():
    d, _ = _toy(2000, 5)
    a = gcompute(d, PLAN, GRID, mc_draws=1000, seed=3)
    b = gcompute(d, PLAN, GRID, mc_draws=1000, seed=3)
    assert np.array_equal(a.values, b.values)


def test_available_case_uses_observed_rows():
    d, rng = _toy(4000, 6)
    miss = rng.random(d.n) < 0.3
    d.missing = {"Y": miss}
    est = gcompute(d, PLAN, [0.0], mc_draws=1000, seed=0)
    assert est.info["rows"]["Y"] == int((~miss).sum())
    with pytest.raises(ValueError):
        gcompute(d, PLAN, [0.0], mc_draws=100, mode="complete")


# -- pooling and intervals ---------------------------------------------------------------------------


def test_pool_identity_average_and_grid_check():
    g = np.array([0.0, 1.0])
    a = CcrcEstimate(g, [0.2, 0.4], "x")
    b = CcrcEstimate(g, [0.4, 0.0], "x")
    assert np.array_equal(pool([a]).values, a.values)
    assert np.allclose(pool([a, b]).values, [0.3, 0.2])
    with pytest.raises(GridMismatch):
        pool([a, CcrcEstimate(np.array([0.0, 2.0]), [0.1, 0.1], "x")])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.lists(st.floats(0, 1), min_size=3, max_size=3), min_size=1, max_size=6), st.floats(-2, 2))
def test_pool_is_linear(rows, c):
    g = np.arange(3.0)
    ests = [CcrcEstimate(g, r, "x") for r in rows]
    shifted = [CcrcEstimate(g, np.asarray(r) * c + 1, "x") for r in rows]
    assert np.allclose(pool(shifted).values, pool(ests).values * c + 1)


def test_mc_interval():
    ci = mc_interval(np.full((5, 3), 0.5), np.array([0.5, 0.4, 0.6]), [0, 1, 2])
    assert np.allclose(ci.mean_diff, [0, 0.1, -0.1])
    assert np.allclose(ci.half_width, 0)
    assert list(ci.excludes_zero()) == [False, True, True]
    est = np.array([[0.1], [0.3]])
    ci = mc_interval(est, [0.0], [0])
    assert np.isclose(ci.upper[0], 0.2 + 2 * np.std([0.1, 0.3], ddof=1) / np.sqrt(2))
    with pytest.raises(ValueError):
        mc_interval(np.zeros((1, 3)), np.zeros(3), [0, 1, 2])


# -- multiple imputation ---------------------------------------------------------------------------


def test_mi_without_missing_returns_copies():
    d, _ = _toy(200, 7)
    out = impute_mi(d, m=3)
    assert len(out) == 3
    assert all(np.array_equal(o.columns["A"], d.columns["A"]) for o in out)


def test_mi_respects_bounds_and_keeps_observed():
    rng = np.random.default_rng(8)
    n = 1000
    x = rng.normal(size=n)
    efv = np.clip(5 + 6 * x + rng.normal(size=n) * 8, 0, 35)
    miss = rng.random(n) < 0.3
    d = Dataset({"X": x, "EFV_6": efv}, {"EFV_6": miss})
    for o in impute_mi(d, m=2, seed=1, sweeps=3):
        v = o.columns["EFV_6"]
        assert v.min() >= 0 and v.max() <= 35
        assert np.array_equal(v[~miss], efv[~miss])
        assert not o.missing


def test_mi_mcar_means_unbiased():
    rng = np.random.default_rng(10)
    n = 3000
    x = rng.normal(size=n)
    y = 1 + 0.8 * x + rng.normal(size=n)
    b = (rng.random(n) < _expit(x)).astype(float)
    miss_y = rng.random(n) < 0.3
    miss_b = rng.random(n) < 0.3
    d = Dataset({"X": x, "Y": y, "B": b}, {"Y": miss_y, "B": miss_b})
    out = impute_mi(d, m=5, seed=2, sweeps=5)
    my = np.mean([o.columns["Y"].mean() for o in out])
    mb = np.mean([o.columns["B"].mean() for o in out])
    assert abs(my - y.mean()) < 3 * y.std() / np.sqrt(n)
    assert abs(mb - b.mean()) < 3 * 0.5 / np.sqrt(n)
    assert set(np.unique(out[0].columns["B"])) <= {0.0, 1.0}
