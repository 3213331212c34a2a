import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mdag import fixtures
from mdag.estimand import DiscreteJoint, evaluate, pretty_print, truncated_factorization
from mdag.graph import build_mdag
from mdag.identify import (
    BackdoorViolation,
    CausalQuery,
    backdoor_gformula,
    idc,
    identify,
    minimal_adjustment_sets,
    minimal_separating_sets,
    query_from_dict,
    query_to_dict,
)

from oracles import dsep_oracle, random_dag, subsets


def _bow():
    return build_mdag([("X", "observed"), ("Y", "observed"), ("U", "latent")], [("U", "X"), ("U", "Y"), ("X", "Y")])


def test_bow_arc_not_identifiable():
    res = idc(CausalQuery(("Y",), (("X", 1),)), _bow())
    assert not res.identifiable
    assert res.estimand is None
    assert "hedge" in res.failure_witness


def test_front_door_identifiable():
    g = build_mdag([("X", "observed"), ("Z", "observed"), ("Y", "observed"), ("U", "latent")], [("X", "Z"), ("Z", "Y"), ("U", "X"), ("U", "Y")])
    rng = np.random.default_rng(0)
    j = DiscreteJoint.random(g.c_dag().subgraph(["X", "Z", "Y", "U"]), rng)
    res = idc(CausalQuery(("Y",), (("X", 1),)), g)
    assert res.identifiable
    obs = j.marginal(["X", "Z", "Y"])
    from mdag.estimand import DiscreteJoint as DJ

    j_obs = DJ(obs.vars, {v: j.domains[v] for v in obs.vars}, obs.table)
    truth = truncated_factorization(j, g, {"X": 1}).sum_out(["U", "Z"])
    assert evaluate(res.estimand, j_obs).allclose(truth, 1e-10)


def _random_case(seed):
    rng = np.random.default_rng(seed)
    g, names = random_dag(rng, 3, 6, latents=int(rng.integers(0, 3)))
    y = names[-1]
    xs = [v for v in names[:-1] if rng.random() < 0.4] or [names[0]]
    do = {x: int(rng.integers(0, 2)) for x in xs}
    ys = [y] + [v for v in names[:-1] if v not in xs and rng.random() < 0.3]
    return rng, g, names, ys, do


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_idc_matches_truncation(seed):
    rng, g, names, ys, do = _random_case(seed)
    res = idc(CausalQuery(tuple(ys), tuple(do.items())), g)
    if not res.identifiable:
        return
    j = DiscreteJoint.random(g, rng)
    truth = truncated_factorization(j, g, do)
    truth = truth.sum_out([v for v in truth.vars if v not in ys])
    assert evaluate(res.estimand, j).allclose(truth, 1e-9)


def test_conditional_query_matches_truncation():
    g = build_mdag(["Z", "X", "W", "Y"], [("Z", "X"), ("X", "W"), ("W", "Y"), ("Z", "Y")])
    j = DiscreteJoint.random(g, np.random.default_rng(4))
    res = idc(CausalQuery(("Y",), (("X", 1),), ((("Y", 1)),), given=("Z",)), g)
    assert res.identifiable
    do = truncated_factorization(j, g, {"X": 1}).sum_out(["W"])
    tab = do.aligned(("Z", "Y"))
    want = tab[:, 1] / tab.sum(axis=1)
    got = evaluate(res.estimand, j).aligned(("Z",))
    assert np.allclose(got, want, atol=1e-10)


def test_fig2_idc_estimand():
    res = idc(fixtures.fig2_query(), fixtures.fig2())
    assert res.identifiable
    text = pretty_print(res.estimand)
    assert text.startswith("Σ_{Y1}")
    assert "P(Y1^{M=0} | A1 = a1)" in text


def test_backdoor_equals_idc_theta36():
    g = fixtures.g_main()
    c = g.c_dag()
    keep = [n for n in c.nodes if c.time(n) is None or c.time(n) <= 36]
    sub = c.subgraph(keep)
    j = DiscreteJoint.random(sub, np.random.default_rng(3))
    q = fixtures.theta_query(36)
    e1 = identify(q, g, "idc").estimand
    e2 = identify(q, g, "backdoor").estimand
    for a in (0, 1):
        p = {"a": a}
        v1, v2 = evaluate(e1, j, p), evaluate(e2, j, p)
        truth = truncated_factorization(j, sub, {"EFV_6": a, "EFV_36": a})
        truth = truth.fix({"VL_36": 1}).sum_out([v for v in truth.vars if v != "VL_36"])
        assert abs(float(v1.table) - float(v2.table)) < 1e-9
        assert abs(float(v1.table) - float(truth.table)) < 1e-9


def test_backdoor_witness_when_weight_dropped():
    q = fixtures.theta_query(36)
    conf = [c for c in q.confounders if not c.startswith("Weight")]
    with pytest.raises(BackdoorViolation) as info:
        backdoor_gformula(q, fixtures.g_main(), conf)
    assert info.value.path[0].startswith("EFV")
    assert any(n.startswith("Weight") for n in info.value.path)


def test_backdoor_on_fig1_treatment():
    g = build_mdag(["L", "A", "Y"], [("L", "A"), ("L", "Y"), ("A", "Y")])
    res = backdoor_gformula(CausalQuery(("Y",), (("A", 1),), confounders=("L",)), g)
    assert res.identifiable
    with pytest.raises(BackdoorViolation):
        backdoor_gformula(CausalQuery(("Y",), (("A", 1),), confounders=()), g)


def test_minimal_separating_sets_fig2():
    g = fixtures.fig2()
    sets = minimal_separating_sets(g, {"Y2"}, {"M_Y1", "M_Y2"}, candidates=["A1", "A2", "Y1", "X1"])
    assert frozenset({"A1", "A2", "Y1"}) in sets
    assert minimal_separating_sets(g, {"Y1"}, {"M_Y1"}, candidates=["A1", "A2", "X2"]) == [frozenset({"A1"})]


def test_minimal_separating_sets_are_minimal_and_valid():
    g, names = random_dag(np.random.default_rng(11), 6, 6, p=0.5)
    x, y = names[0], names[-1]
    cand = names[1:-1]
    found = minimal_separating_sets(g, {x}, {y}, candidates=cand)
    brute = [frozenset(s) for s in subsets(cand) if dsep_oracle(g, [x], [y], s)]
    minimal = [s for s in brute if not any(t < s for t in brute)]
    assert set(found) == set(minimal)


def test_minimal_adjustment_sets():
    g = build_mdag(["L", "A", "Y", "W"], [("L", "A"), ("L", "Y"), ("A", "Y"), ("W", "Y")])
    sets = minimal_adjustment_sets(CausalQuery(("Y",), (("A", 1),)), g)
    assert sets == [frozenset({"L"})]


def test_query_roundtrip():
    q = fixtures.theta84()
    assert query_from_dict(query_to_dict(q)) == q
