import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mdag import fixtures
from mdag.graph import UnknownNode
from mdag.scm import (
    Dataset,
    FormulaDomainError,
    FormulaError,
    NodeSpec,
    ScmSpec,
    TruncatedNormalRedraw,
    apply_missingness,
    cohort_spec,
    compile_formula,
    interventional_mean,
    load_spec,
    sample,
    sample_interventional,
    spec_from_dict,
    spec_to_dict,
)

TREAT = {f"EFV_{w}": 0.0 for w in (6, 36, 48, 60, 84)}


@pytest.fixture(scope="module")
def main_sample():
    return sample(cohort_spec("main"), 5000, 1)


def test_baseline_marginals(main_sample):
    d = main_sample
    assert abs(d.columns["Sex"].mean() - 0.5) < 0.02
    assert abs(d.columns["SES_0"].mean() - 3) < 0.1
    assert set(np.unique(d.columns["Genotype"])) <= {1, 2, 3}
    assert set(np.unique(d.columns["Dose_6"])) <= {1, 2, 3, 4}


def test_efv_in_bounds(main_sample):
    for w in (6, 36, 48, 60, 84):
        x = main_sample.columns[f"EFV_{w}"]
        assert x.min() >= 0.2032 and x.max() <= 21.84


def test_sampling_is_deterministic():
    s = cohort_spec("main")
    a, b = sample(s, 300, 5, 2), sample(s, 300, 5, 2)
    c = sample(s, 300, 5, 3)
    assert all(np.array_equal(a.columns[k], b.columns[k]) for k in a.columns)
    assert not np.array_equal(a.columns["Age"], c.columns["Age"])


def test_interventional_leaf_leaves_others_unchanged():
    s = cohort_spec("main")
    base = sample_interventional(s, {}, 500, 3)
    do = sample_interventional(s, {"VL_84": 1}, 500, 3)
    assert np.all(do.columns["VL_84"] == 1)
    for k in base.columns:
        if k != "VL_84":
            assert np.array_equal(base.columns[k], do.columns[k]), k
    assert not do.missing
    assert not any(k.startswith("M_") for k in do.columns)


def test_interventional_unknown_node():
    with pytest.raises(UnknownNode):
        sample_interventional(cohort_spec("main"), {"Nope": 1}, 10, 0)


def test_truth_monotone_in_exposure():
    s = cohort_spec("main")
    vals = [interventional_mean(s, {k: a for k in TREAT}, "VL_84", 50_000, 0) for a in (0, 1, 2, 5)]
    assert all(x > y for x, y in zip(vals, vals[1:]))


def test_truncnorm_tail_mass():
    t = TruncatedNormalRedraw(0.0, 1.0, -1.0, -1.0, -0.5, 1.5, 1.0, 1.5)
    x = t.sample(np.random.default_rng(0), 200_000)
    lo, hi = t.tail_probabilities()
    n = len(x)
    # redraws land in [a1, a2] / [b1, b2]; untouched normals in (a, b)
    in_low = np.mean((x >= -1.0) & (x <= -0.5))
    from scipy.stats import norm

    want_low = lo + norm.cdf(-0.5) - norm.cdf(-1.0)
    assert abs(in_low - want_low) < 3 * np.sqrt(want_low * (1 - want_low) / n)
    assert x.min() >= -1.0 and x.max() <= 1.5
    assert 0 < hi < 1


@settings(max_examples=50, deadline=None)
@given(
    st.floats(-5, 5),
    st.floats(0.1, 5),
    st.floats(-3, 0),
    st.floats(0.1, 3),
    st.integers(0, 10_000),
)
def test_truncnorm_always_in_bounds(mu, sigma, a, width, seed):
    b = a + width
    t = TruncatedNormalRedraw(mu, sigma, a, a, a + width / 3, b, b - width / 3, b)
    x = t.sample(np.random.default_rng(seed), 2000)
    assert x.min() >= a and x.max() <= b


def test_truncnorm_rejects_bad_bounds():
    with pytest.raises(ValueError):
        TruncatedNormalRedraw(0, 1, 0, -1, 1, 2, 1, 2)


def test_formula_grammar():
    f = compile_formula("1/(1+exp(-(0.5 + 2*x))) + I(x > 1)*3")
    assert f.names == ("x",)
    v = f({"x": np.array([0.0, 2.0])})
    assert np.allclose(v, [1 / (1 + np.exp(-0.5)), 1 / (1 + np.exp(-4.5)) + 3])
    assert np.allclose(compile_formula("-x**2")({"x": np.array([3.0])}), [-9])
    with pytest.raises(FormulaError):
        compile_formula("__import__('os')")
    with pytest.raises(FormulaError):
        compile_formula("x +")
    with pytest.raises(FormulaDomainError):
        compile_formula("sqrt(x)")({"x": np.array([-1.0])})
    with pytest.raises(FormulaDomainError):
        compile_formula("1/x")({"x": np.array([0.0])})


def test_formula_must_reference_parents():
    with pytest.raises(FormulaError):
        ScmSpec("bad", [NodeSpec("A", "bernoulli", {"p": "0.5"}), NodeSpec("B", "bernoulli", {"p": "A*0.5"})])


def test_multinomial_normalised_and_clamped():
    s = ScmSpec("m", [NodeSpec("C", "multinomial", {"probs": ["0.2", "0.2", "0.2"]}, categories=(1, 2, 3))])
    d = sample(s, 30_000, 0)
    freq = [np.mean(d.columns["C"] == k) for k in (1, 2, 3)]
    assert np.allclose(freq, 1 / 3, atol=0.015)
    b = ScmSpec("b", [NodeSpec("B", "bernoulli", {"p": "1.4"})])
    db = sample(b, 100, 0)
    assert np.all(db.columns["B"] == 1)
    assert db.meta["clamped"]["B"] == 100


def test_specs_match_graphs():
    for v in ("main", "alt1", "alt2"):
        cohort_spec(v).validate_against(fixtures.cohort_graph(v))


def test_sim1_masking(main_sample):
    d = apply_missingness(main_sample, "sim1")
    for w in (0, 6, 36):
        assert np.all(d.columns[f"M_Weight_{w}"] == 0)
        assert f"Weight_{w}" not in d.missing
        assert np.array_equal(d.missing[f"VL_{w}"], main_sample.columns[f"M_VL_{w}"] == 1)
    assert 0.05 < d.missing_rate("VL_84") < 0.15
    assert np.all(np.isnan(d.values("VL_84")[d.missing["VL_84"]]))


def test_sim2_masking(main_sample):
    d = apply_missingness(main_sample, "sim2")
    for w in (6, 36, 84):
        assert np.array_equal(main_sample.columns[f"M_Weight_{w}"], main_sample.columns[f"MV_{w}"])
        assert f"EFV_{w}" in d.missing and f"Weight_{w}" in d.missing


def test_technical_issue_halves_missingness():
    s = cohort_spec("main")
    d = sample(s, 40_000, 9)
    sel = (d.columns["MV_36"] == 0) & (d.columns["TI_36"] == 1)
    p = d.columns["M_VL_36"][sel].mean()
    se = np.sqrt(0.25 / sel.sum())
    assert abs(p - 0.5) < 3 * se
    assert np.all(d.columns["M_VL_36"][d.columns["MV_36"] == 1] == 1)


def test_csv_roundtrip(tmp_path, main_sample):
    d = apply_missingness(main_sample, "sim1")
    p = tmp_path / "d.csv"
    d.to_csv(p)
    d.write_metadata(tmp_path / "d.meta.json")
    e = Dataset.from_csv(p, tmp_path / "d.meta.json")
    assert e.n == d.n
    for k in ("VL_84", "EFV_36", "Genotype"):
        assert np.array_equal(e.missing.get(k, np.zeros(e.n, bool)), d.missing.get(k, np.zeros(d.n, bool)))
        obs = d.observed(k)
        assert np.allclose(e.columns[k][obs], d.columns[k][obs])
    assert e.meta["scenario"] == "sim1"


def test_spec_roundtrip(tmp_path):
    s = cohort_spec("alt2")
    p = tmp_path / "s.json"
    p.write_text(json.dumps(spec_to_dict(s)))
    t = load_spec(p)
    assert t.names == s.names
    a, b = sample(s, 200, 4), sample(t, 200, 4)
    assert all(np.array_equal(a.columns[k], b.columns[k]) for k in a.columns)
    assert spec_from_dict(spec_to_dict(s)).names == s.names
