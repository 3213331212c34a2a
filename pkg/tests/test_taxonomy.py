import pytest

from mdag import fixtures
from mdag.graph import Role, build_mdag
from mdag.taxonomy import Mechanism, NotClosed, classify_mechanism, closed_implies_independence_check, is_closed

from oracles import undirected_connected


@pytest.mark.parametrize(
    "name,expected",
    [("fig1a", "MCAR"), ("fig1b", "MAR"), ("fig1c", "MNAR"), ("fig1d", "MNAR"), ("g_main", "MNAR"), ("g_alt1", "MNAR"), ("g_alt2", "MNAR")],
)
def test_classes(name, expected):
    mc = classify_mechanism(fixtures.GRAPHS[name]())
    assert mc.mechanism.value == expected
    assert (not mc.evidence) == (expected == "MCAR")


def test_main_evidence_lists_technical_issues():
    mc = classify_mechanism(fixtures.g_main())
    for t in fixtures.WEEKS:
        assert (f"M_VL_{t}", f"TI_{t}") in mc.evidence


def test_evidence_parents_are_real():
    for name, fn in fixtures.GRAPHS.items():
        g = fn()
        for m, p in classify_mechanism(g).evidence:
            assert p in g.parents(m)


def test_closedness():
    assert is_closed(fixtures.g_main()).closed
    assert is_closed(fixtures.g_main("full")).closed
    rep = is_closed(fixtures.g_alt1())
    assert not rep.closed
    g = fixtures.g_alt1()
    path = rep.witness_path
    assert g.role(path[0]) in (Role.OBSERVED, Role.PARTIAL, Role.LATENT)
    assert g.role(path[-1]) is Role.MISSINGNESS
    for u, v in zip(path, path[1:]):
        assert u in g.parents(v) or v in g.parents(u)
    assert not is_closed(fixtures.g_alt2()).closed


def test_closedness_matches_bfs_oracle():
    for fn in fixtures.GRAPHS.values():
        g = fn()
        v = set(g.nodes_with_role(Role.OBSERVED, Role.PARTIAL, Role.LATENT))
        m = set(g.nodes_with_role(Role.MISSINGNESS))
        assert is_closed(g).closed == (not undirected_connected(g, v, m))


def test_empty_indicator_set_is_closed():
    g = build_mdag(["A", "B"], [("A", "B")])
    assert is_closed(g).closed


def test_corollary_check():
    assert closed_implies_independence_check(fixtures.g_main())
    assert closed_implies_independence_check(fixtures.fig1a())
    with pytest.raises(NotClosed):
        closed_implies_independence_check(fixtures.g_alt1())


def test_closed_means_no_substantive_parent_of_indicator():
    for fn in fixtures.GRAPHS.values():
        g = fn()
        if not is_closed(g).closed:
            continue
        bad = set(g.nodes_with_role(Role.OBSERVED, Role.PARTIAL, Role.LATENT))
        for m in g.nodes_with_role(Role.MISSINGNESS):
            assert not (set(g.parents(m)) & bad)


def test_classification_invariant_to_relabeling():
    a = fixtures.fig1b()
    b = build_mdag([("P", "observed"), ("Q", "observed"), ("R", "partial"), ("M_R", "missingness")], [("Q", "R"), ("P", "R"), ("P", "M_R")])
    assert classify_mechanism(a).mechanism == classify_mechanism(b).mechanism == Mechanism.MAR


def test_mcar_satisfies_mar_condition():
    g = fixtures.fig1a()
    ok = set(g.nodes_with_role(Role.OBSERVED, Role.MISSINGNESS))
    for m in g.nodes_with_role(Role.MISSINGNESS):
        assert set(g.parents(m)) <= ok
