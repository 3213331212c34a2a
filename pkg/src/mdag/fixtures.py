"""Built-in graphs and queries: the small taxonomy examples, the two-period
attrition example, and the paediatric HIV cohort m-DAGs (main and two
alternatives).

Follow-up times are indexed by study week. Node names carry the week as a
suffix (``VL_36``); baseline covariates without a time-varying counterpart
(``Age``, ``Sex``, ``Genotype``, ``NRTI``) have no suffix.

Running ``python -m mdag.fixtures DIR`` writes every fixture as JSON.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path
from typing import Callable, Dict, List, Tuple

from .graph import MDag, NodeInfo, Role, build_mdag, graph_to_dict
from .identify import CausalQuery, query_to_dict

WEEKS = (0, 6, 36, 48, 60, 84)
BASELINE_CONFOUNDERS = ("Weight_0", "NRTI", "Genotype", "Sex", "Age")
TIME_CONFOUNDERS = ("Weight", "MEMS")

O, P, L, M, Z = Role.OBSERVED, Role.PARTIAL, Role.LATENT, Role.MISSINGNESS, Role.AUXILIARY


def _n(name: str, role: Role, time=None, target=None, observed=True) -> NodeInfo:
    return NodeInfo(name, role, time, target, observed)


def _ind(target: str, time=None) -> NodeInfo:
    return NodeInfo(f"M_{target}", M, time, target)


# -- small examples -------------------------------------------------------------


def fig1a() -> MDag:
    """MCAR: the outcome indicator has no parents."""
    return build_mdag([_n("A", O), _n("X", O), _n("Y", P), _ind("Y")], [("X", "Y"), ("A", "Y")])


def fig1b() -> MDag:
    """MAR: missingness of Y driven by the fully observed treatment."""
    return build_mdag([_n("A", O), _n("X", O), _n("Y", P), _ind("Y")], [("X", "Y"), ("A", "Y"), ("A", "M_Y")])


def fig1c() -> MDag:
    """MNAR: Y causes its own missingness."""
    return build_mdag([_n("A", O), _n("X", O), _n("Y", P), _ind("Y")], [("X", "Y"), ("A", "Y"), ("Y", "M_Y")])


def fig1d() -> MDag:
    """MNAR: a latent cause of treatment also drives missingness."""
    return build_mdag(
        [_n("U", L), _n("A", O), _n("X", O), _n("Y", P), _ind("Y")],
        [("X", "Y"), ("A", "Y"), ("U", "A"), ("U", "M_Y")],
    )


def fig2() -> MDag:
    """Two-period study with attrition; side effects cause their own missingness."""
    nodes = [_n("A1", O, 1), _n("A2", O, 2), _n("X1", P, 1), _n("Y1", P, 1), _n("X2", P, 2), _n("Y2", P, 2)]
    nodes += [_ind(v, int(v[-1])) for v in ("X1", "Y1", "X2", "Y2")]
    edges = [
        ("A1", "A2"), ("A1", "Y2"), ("A1", "X1"), ("A1", "Y1"), ("A1", "X2"), ("Y1", "X2"), ("Y1", "Y2"),
        ("X1", "M_X1"), ("X1", "M_Y1"), ("M_Y1", "M_Y2"), ("X2", "M_X2"), ("X2", "M_Y2"), ("A2", "X2"), ("A2", "Y2"),
    ]
    return build_mdag(nodes, edges)


def fig2_query() -> CausalQuery:
    return CausalQuery(("Y2",), (("A1", "a1"), ("A2", "a2")), name="fig2")


# -- cohort m-DAGs ------------------------------------------------------------


def _cohort(variant: str, proxies: str = "collapsed", weeks: Tuple[int, ...] = WEEKS) -> MDag:
    if variant not in ("main", "alt1", "alt2"):
        raise ValueError(f"unknown variant {variant!r}")
    nodes: List[NodeInfo] = [
        _n("Sex", O), _n("Age", O), _n("Genotype", O), _n("NRTI", O),
        _n("CoMo_0", O, 0), _n("Weight_0", P, 0), _n("VL_0", P, 0),
    ]
    edges = [("Sex", "Weight_0"), ("Age", "Weight_0"), ("Sex", "Genotype"), ("Age", "NRTI")]
    for k, t in enumerate(weeks[1:], start=1):
        p = weeks[k - 1]
        nodes += [_n(f"CoMo_{t}", O, t), _n(f"Dose_{t}", O, t)]
        nodes += [_n(f"{v}_{t}", P, t) for v in ("Weight", "MEMS", "EFV", "VL")]
        edges += [
            (f"CoMo_{p}", f"MEMS_{t}"),
            (f"Weight_{p}", f"Weight_{t}"), (f"CoMo_{p}", f"Weight_{t}"),
            (f"CoMo_{p}", f"CoMo_{t}"), ("Age", f"CoMo_{t}"), (f"Weight_{p}", f"CoMo_{t}"), (f"VL_{p}", f"CoMo_{t}"),
            (f"Dose_{t}", f"EFV_{t}"), (f"MEMS_{t}", f"EFV_{t}"), ("Genotype", f"EFV_{t}"),
            (f"VL_{p}", f"VL_{t}"), (f"CoMo_{p}", f"VL_{t}"), (f"EFV_{t}", f"VL_{t}"),
            (f"Weight_{t}", f"Dose_{t}"), ("Age", f"Dose_{t}"),
        ]
        if k >= 2:
            edges += [(f"MEMS_{p}", f"MEMS_{t}"), (f"Dose_{p}", f"Dose_{t}")]

    # missingness layer
    if proxies == "collapsed":
        causes = ["SES_0"]
        nodes.append(_n("SES_0", O if variant == "alt2" else Z, 0))
    elif proxies == "full":
        causes = ["BMQ", "SES", "BHV"]
        nodes += [_n("BMQ", Z), _n("SES", Z)]
        nodes.append(_n("BHV", L) if variant == "alt2" else _n("BHV", Z, observed=False))
    else:
        raise ValueError(f"unknown proxy layout {proxies!r}")
    behaviour = "SES_0" if proxies == "collapsed" else "BHV"
    for k, t in enumerate(weeks):
        nodes += [_n(f"MV_{t}", Z, t), _n(f"TI_{t}", Z, t, observed=False)]
        edges += [(c, f"MV_{t}") for c in causes]
        if k >= 1 and proxies == "collapsed":
            edges.append((f"MV_{weeks[k - 1]}", f"MV_{t}"))
        partial = ["VL", "Weight"] + (["EFV", "MEMS"] if k >= 1 else [])
        nodes += [_ind(f"{v}_{t}", t) for v in partial]
        edges += [(f"MV_{t}", f"M_VL_{t}"), (f"TI_{t}", f"M_VL_{t}"), (f"MV_{t}", f"M_Weight_{t}")]
        if k >= 1:
            edges += [(f"MV_{t}", f"M_EFV_{t}"), (f"TI_{t}", f"M_EFV_{t}"), (f"TI_{t}", f"M_MEMS_{t}")]
            if variant == "alt2":
                edges.append((behaviour, f"MEMS_{t}"))
        if variant == "alt1":
            edges.append((f"VL_{t}", f"MV_{t}"))
    return build_mdag(nodes, edges)


def g_main(proxies: str = "collapsed") -> MDag:
    return _cohort("main", proxies)


def g_alt1(proxies: str = "collapsed") -> MDag:
    return _cohort("alt1", proxies)


def g_alt2(proxies: str = "collapsed") -> MDag:
    return _cohort("alt2", proxies)


def cohort_graph(variant: str, proxies: str = "collapsed") -> MDag:
    return _cohort(variant, proxies)


def theta_query(week: int, value="a") -> CausalQuery:
    """P(VL_week = 1; do(EFV_t := a for every follow-up t <= week))."""
    if week not in WEEKS[1:]:
        raise ValueError(f"week must be one of {WEEKS[1:]}")
    upto = [t for t in WEEKS[1:] if t <= week]
    conf = list(BASELINE_CONFOUNDERS) + [f"{v}_{t}" for t in upto for v in TIME_CONFOUNDERS]
    return CausalQuery(
        (f"VL_{week}",),
        tuple((f"EFV_{t}", value) for t in upto),
        ((f"VL_{week}", 1),),
        confounders=tuple(conf),
        name=f"theta{week}",
    )


def theta36() -> CausalQuery:
    return theta_query(36)


def theta84() -> CausalQuery:
    return theta_query(84)


GRAPHS: Dict[str, Callable[[], MDag]] = {
    "fig1a": fig1a,
    "fig1b": fig1b,
    "fig1c": fig1c,
    "fig1d": fig1d,
    "fig2": fig2,
    "g_main": g_main,
    "g_alt1": g_alt1,
    "g_alt2": g_alt2,
    "g_main_full": lambda: g_main("full"),
    "g_alt1_full": lambda: g_alt1("full"),
    "g_alt2_full": lambda: g_alt2("full"),
}

QUERIES: Dict[str, Callable[[], CausalQuery]] = {
    "fig2_query": fig2_query,
    "theta36": theta36,
    "theta84": theta84,
}


def write_all(directory) -> List[Path]:
    """Write graph, query and SCM fixtures as JSON into ``directory``."""
    from .scm import SCENARIOS, cohort_spec, spec_to_dict

    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def dump(name, data):
        path = out / f"{name}.json"
        path.write_text(json.dumps(data, indent=1) + "\n", encoding="utf-8")
        written.append(path)

    for name, fn in GRAPHS.items():
        dump(name, graph_to_dict(fn()))
    for name, fn in QUERIES.items():
        dump(name, query_to_dict(fn()))
    for variant in ("main", "alt1", "alt2"):
        dump(f"scm_{variant}", spec_to_dict(cohort_spec(variant)))
    for sim, families in SCENARIOS.items():
        dump(sim, {"scenario": sim, "masked": list(families)})
    return written


if __name__ == "__main__":  # pragma: no cover
    for p in write_all(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).with_name("data")):
        print(p)
