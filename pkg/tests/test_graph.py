import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mdag import fixtures
from mdag.graph import (
    CycleDetected,
    IllegalMEdge,
    MissingIndicator,
    OrphanIndicator,
    Role,
    UnknownNode,
    build_mdag,
    graph_from_dict,
    graph_to_dict,
    load_graph,
    GraphFormatError,
)

from oracles import ancestors_oracle, dsep_oracle, random_dag


def test_fig1a_builds():
    g = fixtures.fig1a()
    assert set(g.nodes) == {"A", "X", "Y", "M_Y"}
    assert g.indicator("Y") == "M_Y"
    assert g.target("M_Y") == "Y"


def test_indicator_with_child_is_illegal():
    with pytest.raises(IllegalMEdge):
        build_mdag([("A", "observed"), ("Y", "partial"), ("M_Y", "missingness")], [("M_Y", "A")])


def test_self_loop_is_a_cycle():
    with pytest.raises(CycleDetected):
        build_mdag(["Y"], [("Y", "Y")])


def test_longer_cycle():
    with pytest.raises(CycleDetected):
        build_mdag(["A", "B", "C"], [("A", "B"), ("B", "C"), ("C", "A")])


def test_orphan_and_missing_indicator():
    with pytest.raises(OrphanIndicator):
        build_mdag([("A", "observed"), ("M_Q", "missingness")], [])
    with pytest.raises(MissingIndicator):
        build_mdag([("A", "observed"), ("Y", "partial")], [("A", "Y")])


def test_indicator_may_parent_indicator():
    g = fixtures.fig2()
    assert "M_Y2" in g.children("M_Y1")


def test_dsep_examples():
    assert fixtures.fig1b().d_separated({"Y"}, {"M_Y"}, {"A"})
    assert not fixtures.fig1c().d_separated({"Y"}, {"M_Y"}, set())
    assert fixtures.fig2().d_separated({"Y2"}, {"M_Y1", "M_Y2"}, {"A1", "A2", "Y1"})


def test_dsep_unknown_node():
    with pytest.raises(UnknownNode):
        fixtures.fig1a().d_separated({"Q"}, {"Y"}, set())


def test_dsep_matches_oracle_on_fixtures():
    for name in ("fig1a", "fig1b", "fig1c", "fig1d", "fig2"):
        g = fixtures.GRAPHS[name]()
        nodes = list(g.nodes)
        for a in nodes:
            for b in nodes:
                if a >= b:
                    continue
                rest = [n for n in nodes if n not in (a, b)]
                for z in ([], rest[:1], rest[:2], rest[1:3]):
                    assert g.d_separated({a}, {b}, set(z)) == dsep_oracle(g, [a], [b], z), (name, a, b, z)


def test_ancestors():
    assert fixtures.fig1a().ancestors({"Y"}) == {"Y", "X", "A"}
    assert fixtures.fig1a().ancestors({"A"}) == {"A"}
    assert fixtures.fig2().ancestors({"Y1"}) == {"Y1", "A1"}


def test_c_components():
    g = fixtures.fig1d()
    comps = [set(c) for c in g.c_components({"U"})]
    assert {"A", "M_Y"} in comps
    assert all(len(c) == 1 for c in fixtures.fig1a().c_components(set()))
    c = fixtures.g_main().c_dag()
    assert all(len(x) == 1 for x in c.c_components(set()))


def test_json_roundtrip(tmp_path):
    g = fixtures.g_alt1()
    p = tmp_path / "g.json"
    p.write_text(json.dumps(graph_to_dict(g)))
    h = load_graph(p)
    assert h.nodes == g.nodes
    assert all(h.parents(n) == g.parents(n) for n in g.nodes)
    assert h.role("TI_6") is Role.AUXILIARY and not h.info("TI_6").observed


def test_malformed_json_reports_position(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"nodes": [\n  {"name": "A", "role": "observed"},\n  oops\n]}')
    with pytest.raises(GraphFormatError, match="line 3, column 3"):
        load_graph(p)


def test_unknown_role_rejected():
    with pytest.raises(GraphFormatError):
        graph_from_dict({"nodes": [{"name": "A", "role": "weird"}], "edges": []})


def test_shipped_fixtures_load():
    from importlib import resources

    for name in fixtures.GRAPHS:
        with resources.as_file(resources.files("mdag") / "data" / f"{name}.json") as p:
            g = load_graph(p)
        assert g.nodes == fixtures.GRAPHS[name]().nodes


# -- properties ---------------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_dsep_oracle_random(seed):
    rng = np.random.default_rng(seed)
    g, names = random_dag(rng, 3, 8)
    a, b = rng.choice(len(names), 2, replace=False)
    rest = [n for i, n in enumerate(names) if i not in (a, b)]
    z = [n for n in rest if rng.random() < 0.4]
    x, y = names[a], names[b]
    got = g.d_separated({x}, {y}, set(z))
    assert got == dsep_oracle(g, [x], [y], z)
    assert got == g.d_separated({y}, {x}, set(z))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_ancestors_idempotent_and_match_oracle(seed):
    rng = np.random.default_rng(seed)
    g, names = random_dag(rng, 3, 8)
    s = {n for n in names if rng.random() < 0.3} or {names[-1]}
    anc = g.ancestors(s)
    assert anc == ancestors_oracle(g, s)
    assert g.ancestors(anc) == anc


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_edge_deletion_keeps_separation(seed):
    rng = np.random.default_rng(seed)
    g, names = random_dag(rng, 4, 8, p=0.5)
    edges = [(p, c) for c in g.nodes for p in g.parents(c)]
    if not edges:
        return
    drop = edges[int(rng.integers(len(edges)))]
    h = g.without_edges([drop])
    for _ in range(5):
        a, b = rng.choice(len(names), 2, replace=False)
        z = {n for i, n in enumerate(names) if i not in (a, b) and rng.random() < 0.4}
        if g.d_separated({names[a]}, {names[b]}, z):
            assert h.d_separated({names[a]}, {names[b]}, z)


def test_active_path_is_a_real_open_path():
    g = fixtures.g_main()
    path = g.active_path({"EFV_6"}, {"VL_36"}, set())
    assert path[0] == "EFV_6" and path[-1] == "VL_36"
    for u, v in zip(path, path[1:]):
        assert u in g.parents(v) or v in g.parents(u)
