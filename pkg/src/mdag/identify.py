"""Identification of interventional queries: ID/IDC and the sequential g-formula."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

from .estimand import Conditional, Expression, Product, Quotient, SumOver, Value, product, sum_over
from .graph import GraphError, MDag, Role

__all__ = [
    "CausalQuery",
    "IdentificationResult",
    "BackdoorViolation",
    "idc",
    "identify",
    "backdoor_gformula",
    "minimal_adjustment_sets",
    "minimal_separating_sets",
    "simplify",
    "query_from_dict",
    "query_to_dict",
    "load_query",
]


class BackdoorViolation(GraphError):
    """The supplied confounders leave a back-door path open."""

    def __init__(self, treatment: str, path: Sequence[str]):
        self.treatment = treatment
        self.path = tuple(path)
        super().__init__(f"open back-door path for {treatment}: {' - '.join(self.path)}")


@dataclass(frozen=True)
class CausalQuery:
    outcomes: Tuple[str, ...]
    interventions: Tuple[Tuple[str, Value], ...] = ()
    outcome_values: Tuple[Tuple[str, Value], ...] = ()
    given: Tuple[str, ...] = ()
    confounders: Tuple[str, ...] = ()
    name: str = ""

    def __post_init__(self):
        if isinstance(self.outcomes, str):
            object.__setattr__(self, "outcomes", (self.outcomes,))
        object.__setattr__(self, "interventions", tuple((n, v) for n, v in self.interventions))
        object.__setattr__(self, "outcome_values", tuple((n, v) for n, v in dict(self.outcome_values).items()))
        treated = [n for n, _ in self.interventions]
        if len(set(treated)) != len(treated):
            raise ValueError("intervention nodes must be distinct")
        if set(treated) & set(self.outcomes):
            raise ValueError("an outcome cannot also be intervened on")

    @property
    def outcome(self) -> str:
        return self.outcomes[0]

    @property
    def treatments(self) -> Tuple[str, ...]:
        return tuple(n for n, _ in self.interventions)

    @property
    def do(self) -> Dict[str, Value]:
        return dict(self.interventions)

    def describe(self) -> str:
        ys = ", ".join(f"{y}={dict(self.outcome_values)[y]}" if y in dict(self.outcome_values) else y for y in self.outcomes)
        dos = ", ".join(f"{n} := {v}" for n, v in self.interventions)
        cond = f" | {', '.join(self.given)}" if self.given else ""
        return f"P({ys}{cond}; do({dos}))"


@dataclass(frozen=True)
class IdentificationResult:
    identifiable: bool
    estimand: Optional[Expression] = None
    failure_witness: Optional[str] = None
    method: str = "idc"
    query: Optional[CausalQuery] = None

    def __post_init__(self):
        if self.identifiable != (self.estimand is not None):
            raise ValueError("estimand must be present exactly when identifiable")


# -- acyclic directed mixed graph view ----------------------------------------


class _ADMG:
    def __init__(self, order: Sequence[str], directed: Iterable[Tuple[str, str]], bidirected: Iterable[FrozenSet[str]]):
        self.order = tuple(order)
        self.nodes = frozenset(self.order)
        self.directed = frozenset((u, v) for u, v in directed if u in self.nodes and v in self.nodes)
        self.bidirected = frozenset(b for b in bidirected if b <= self.nodes)

    @classmethod
    def project(cls, g: MDag) -> "_ADMG":
        latent = g.nodes_with_role(Role.LATENT)
        directed, bidirected = g.latent_projection(latent)
        return cls([n for n in g.nodes if n not in latent], directed, bidirected)

    def sub(self, keep: Iterable[str]) -> "_ADMG":
        keep = frozenset(keep)
        return _ADMG([n for n in self.order if n in keep], self.directed, self.bidirected)

    def cut_incoming(self, xs: FrozenSet[str]) -> "_ADMG":
        return _ADMG(self.order, [(u, v) for u, v in self.directed if v not in xs], [b for b in self.bidirected if not b & xs])

    def ancestors(self, ys: Iterable[str]) -> FrozenSet[str]:
        out = set(ys)
        frontier = list(out)
        parents: Dict[str, List[str]] = {}
        for u, v in self.directed:
            parents.setdefault(v, []).append(u)
        while frontier:
            for p in parents.get(frontier.pop(), ()):
                if p not in out:
                    out.add(p)
                    frontier.append(p)
        return frozenset(out)

    def c_components(self) -> List[FrozenSet[str]]:
        nbrs: Dict[str, Set[str]] = {n: set() for n in self.order}
        for b in self.bidirected:
            u, v = tuple(b)
            nbrs[u].add(v)
            nbrs[v].add(u)
        seen: Set[str] = set()
        comps = []
        for n in self.order:
            if n in seen:
                continue
            comp, stack = {n}, [n]
            while stack:
                for m in nbrs[stack.pop()]:
                    if m not in comp:
                        comp.add(m)
                        stack.append(m)
            seen |= comp
            comps.append(frozenset(comp))
        return comps

    def ordered(self, names: Iterable[str]) -> Tuple[str, ...]:
        names = set(names)
        return tuple(n for n in self.order if n in names)

    def predecessors(self, v: str) -> Tuple[str, ...]:
        return self.order[: self.order.index(v)]


class _Hedge(Exception):
    def __init__(self, forest: FrozenSet[str], sub: FrozenSet[str]):
        self.forest = forest
        self.sub = sub


# -- distributions passed through the ID recursion ------------------------------


@dataclass(frozen=True)
class _Dist:
    kind: str  # base | chain | expr
    vars: FrozenSet[str]
    chain: Tuple[Tuple[str, Expression], ...] = ()
    expr: Optional[Expression] = None

    def _trim(self, keep: FrozenSet[str]) -> Tuple[Tuple[str, Expression], ...]:
        # trailing chain factors outside ``keep`` integrate to one
        chain = list(self.chain)
        while chain and chain[-1][0] not in keep:
            chain.pop()
        return tuple(chain)

    def _joint(self) -> Expression:
        return self.expr if self.kind == "expr" else product(f for _, f in self.chain)

    def marginal(self, ys: FrozenSet[str], order) -> Expression:
        if self.kind == "base":
            return Conditional(order(ys))
        if self.kind == "chain":
            chain = self._trim(ys)
            rest = frozenset(v for v, _ in chain) - ys
            return sum_over(order(rest), product(f for _, f in chain))
        return sum_over(order(self.vars - ys), self.expr)

    def restrict(self, keep: FrozenSet[str], order) -> "_Dist":
        if self.kind == "base":
            return _Dist("base", keep)
        if self.kind == "chain":
            chain = self._trim(keep)
            if all(v in keep for v, _ in chain):
                return _Dist("chain", keep, chain)
            rest = frozenset(v for v, _ in chain) - keep
            return _Dist("expr", keep, expr=sum_over(order(rest), product(f for _, f in chain)))
        return _Dist("expr", keep, expr=sum_over(order(self.vars - keep), self.expr))

    def conditional(self, v: str, pred: Sequence[str], order) -> Expression:
        pred_set = frozenset(pred) & self.vars
        if self.kind == "base":
            return Conditional((v,), order(pred_set))
        if self.kind == "chain":
            names = [n for n, _ in self.chain]
            if v in names and frozenset(names[: names.index(v)]) == pred_set:
                return self.chain[names.index(v)][1]
        joint = self._joint()
        num = sum_over(order(self.vars - pred_set - {v}), joint)
        if not pred_set:
            return num
        return Quotient(num, sum_over(order(self.vars - pred_set), joint))


def _id(y: FrozenSet[str], x: FrozenSet[str], P: _Dist, G: _ADMG) -> Expression:
    V = G.nodes
    if not x:
        return P.marginal(y, G.ordered)
    an = G.ancestors(y)
    if an != V:
        return _id(y, x & an, P.restrict(an, G.ordered), G.sub(an))
    w = (V - x) - G.cut_incoming(x).ancestors(y)
    if w:
        return _id(y, x | w, P, G)
    comps = G.sub(V - x).c_components()
    if len(comps) > 1:
        return sum_over(G.ordered(V - (y | x)), product(_id(s, V - s, P, G) for s in comps))
    S = comps[0]
    full = G.c_components()
    if full == [V]:
        raise _Hedge(V, S)
    if S in full:
        factors = [P.conditional(v, G.predecessors(v), G.ordered) for v in G.ordered(S)]
        return sum_over(G.ordered(S - y), product(factors))
    Sp = next(c for c in full if S < c)
    chain = tuple((v, P.conditional(v, G.predecessors(v), G.ordered)) for v in G.ordered(Sp))
    return _id(y, x & Sp, _Dist("chain", Sp, chain), G.sub(Sp))


# -- simplification --------------------------------------------------------------


def simplify(e: Expression, g: MDag) -> Expression:
    """Drop conditioning variables made redundant by d-separation in ``g`` and
    integrate out summation variables that only occur as a leaf target."""
    e = e.map_conditionals(lambda c: _prune_given(c, g))
    return _prune_sums(e, g)


def _prune_given(c: Conditional, g: MDag) -> Conditional:
    if c.indicators or c.fixed:
        return c
    given = list(c.given)
    for cand in reversed(g.sorted(c.given)):
        rest = [x for x in given if x != cand]
        if g.d_separated(c.targets, {cand}, rest):
            given = rest
    if len(given) == len(c.given):
        return c
    return Conditional(c.targets, tuple(g.sorted(given)), (), c.po, c.indicators)


def _prune_sums(e: Expression, g: MDag) -> Expression:
    if isinstance(e, Product):
        return product(_prune_sums(f, g) for f in e.factors)
    if isinstance(e, Quotient):
        return Quotient(_prune_sums(e.numerator, g), _prune_sums(e.denominator, g))
    if not isinstance(e, SumOver):
        return e
    body = _prune_sums(e.body, g)
    names = list(e.vars)
    factors = list(body.factors) if isinstance(body, Product) else [body]
    changed = True
    while changed:
        changed = False
        for s in list(names):
            hits = [i for i, f in enumerate(factors) if s in f.free_vars()]
            if len(hits) != 1:
                continue
            f = factors[hits[0]]
            if not isinstance(f, Conditional) or s not in f.targets:
                continue
            if len(f.targets) == 1:
                factors.pop(hits[0])
            else:
                factors[hits[0]] = Conditional(tuple(t for t in f.targets if t != s), f.given, f.fixed, f.po - {s}, f.indicators)
            names.remove(s)
            changed = True
    if not factors:
        raise ValueError("expression integrates to a constant")
    pos = {n: i for i, n in enumerate(g.nodes)}
    factors.sort(key=lambda f: -max(pos[t] for t in f.targets) if isinstance(f, Conditional) else 1)
    return sum_over(g.sorted(names), product(factors))


def _flag_partial(e: Expression, g: MDag) -> Expression:
    partial = set(g.nodes_with_role(Role.PARTIAL))

    def flag(c: Conditional) -> Conditional:
        po = frozenset(v for v in c.variables if v in partial)
        return Conditional(c.targets, c.given, c.fixed, po, c.indicators) if po != c.po else c

    return e.map_conditionals(flag)


# -- public entry points ------------------------------------------------------------


def idc(q: CausalQuery, g: MDag, simplify_output: bool = True) -> IdentificationResult:
    """Identify ``q`` on the c-DAG of ``g`` (latent nodes handled by projection).

    Returns a non-identifiable result carrying the hedge when the recursion fails.
    The estimand has interventions and outcome values bound; partially observed
    variables carry the ``^{M=0}`` flag.
    """
    c = g.c_dag()
    c.check(list(q.outcomes) + list(q.treatments) + list(q.given))
    latent = set(c.nodes_with_role(Role.LATENT))
    bad = latent & (set(q.outcomes) | set(q.treatments) | set(q.given))
    if bad:
        raise GraphError(f"queries cannot mention latent nodes: {sorted(bad)}")
    G = _ADMG.project(c)
    y, x, z = frozenset(q.outcomes), frozenset(q.treatments), frozenset(q.given)
    try:
        e = _idc(y, x, z, G, c)
    except _Hedge as h:
        witness = f"hedge: forests {{{', '.join(G.ordered(h.forest))}}} and {{{', '.join(G.ordered(h.sub))}}}"
        return IdentificationResult(False, None, witness, "idc", q)
    if simplify_output:
        e = simplify(e, c)
    e = e.bind(q.do).bind(dict(q.outcome_values))
    return IdentificationResult(True, _flag_partial(e, c), None, "idc", q)


def _idc(y, x, z, G: _ADMG, c: MDag) -> Expression:
    for zi in G.ordered(z):
        cut = c.mutilated(incoming=x, outgoing={zi})
        if cut.d_separated(y, {zi}, (x | z) - {zi}):
            return _idc(y, x | {zi}, z - {zi}, G, c)
    joint = _id(y | z, x, _Dist("base", G.nodes), G)
    if not z:
        return joint
    return Quotient(joint, sum_over(G.ordered(y), joint))


def _node_time(g: MDag, n: str) -> int:
    t = g.time(n)
    return 0 if t is None else t


def _family(g: MDag, n: str) -> str:
    t = g.time(n)
    if t is not None and n.endswith(f"_{t}"):
        return n[: -len(f"_{t}")]
    return n


def backdoor_gformula(q: CausalQuery, g: MDag, confounders: Optional[Sequence[str]] = None) -> IdentificationResult:
    """Sequential g-formula over the given time-varying confounders.

    Prior outcomes of the outcome's family join the history automatically.
    Within each time point the order is: confounders (as listed), treatment,
    prior outcome. Raises :class:`BackdoorViolation` when some treatment is
    not sequentially back-door admissible given its history.
    """
    c = g.c_dag()
    confounders = tuple(confounders if confounders is not None else q.confounders)
    if len(q.outcomes) != 1:
        raise ValueError("the g-formula factorizer handles a single outcome")
    y = q.outcome
    c.check([y, *q.treatments, *confounders])
    horizon = _node_time(c, y)
    fam = _family(c, y)
    prior = [n for n in c.nodes if n != y and _family(c, n) == fam and c.time(n) is not None and c.time(n) < horizon]
    treatments = sorted(q.treatments, key=lambda n: (_node_time(c, n), n))
    rank = {n: (0, i) for i, n in enumerate(confounders)}
    rank.update({n: (1, 0) for n in treatments})
    rank.update({n: (2, 0) for n in prior})
    history = sorted(rank, key=lambda n: (_node_time(c, n), rank[n]))
    if y in history:
        raise ValueError("the outcome cannot be a confounder")

    _check_sequential_backdoor(c, y, treatments, history)

    factors: List[Expression] = []
    base_time = min(_node_time(c, n) for n in history) if history else 0
    baseline = tuple(n for n in history if n in confounders and _node_time(c, n) == base_time)
    if baseline:
        factors.append(Conditional(baseline))
    seen = list(baseline)
    for n in history:
        if n in baseline:
            continue
        if n not in q.treatments:
            factors.append(Conditional((n,), tuple(seen)))
        seen.append(n)
    factors.insert(0, Conditional((y,), tuple(seen)))
    summed = [n for n in history if n not in q.treatments]
    e = sum_over(c.sorted(summed), product(factors)).bind(q.do).bind(dict(q.outcome_values))
    return IdentificationResult(True, _flag_partial(e, c), None, "backdoor", q)


def _check_sequential_backdoor(c: MDag, y: str, treatments: Sequence[str], history: Sequence[str]) -> None:
    for k, a in enumerate(treatments):
        before = history[: history.index(a)]
        late = set(before) & (c.descendants({a}) - {a})
        if late:
            raise BackdoorViolation(a, [a, sorted(late)[0]])
        cut = c.mutilated(incoming=treatments[k + 1:], outgoing={a})
        path = cut.active_path({y}, {a}, before)
        if path is not None:
            raise BackdoorViolation(a, list(reversed(path)))


def identify(q: CausalQuery, g: MDag, method: str = "idc") -> IdentificationResult:
    if method == "idc":
        return idc(q, g)
    if method == "backdoor":
        return backdoor_gformula(q, g)
    raise ValueError(f"unknown identification method {method!r}")


# -- set searches ---------------------------------------------------------------------


def _minimal_sets(test, candidates: Sequence[str], max_size: Optional[int]) -> List[FrozenSet[str]]:
    found: List[FrozenSet[str]] = []
    limit = len(candidates) if max_size is None else min(max_size, len(candidates))
    for k in range(limit + 1):
        hits = []
        for combo in itertools.combinations(sorted(candidates), k):
            s = frozenset(combo)
            if any(f <= s for f in found):
                continue
            if test(s):
                hits.append(s)
        found.extend(hits)
    return found


def minimal_separating_sets(
    g: MDag, xs: Iterable[str], ys: Iterable[str], candidates: Optional[Iterable[str]] = None, max_size: Optional[int] = None
) -> List[FrozenSet[str]]:
    """Inclusion-minimal Z with X ⊥ Y | Z, smallest first then lexicographic."""
    xs, ys = g.check(xs), g.check(ys)
    if candidates is None:
        candidates = [n for n in g.nodes if n not in xs | ys and g.role(n) is not Role.LATENT]
    candidates = list(candidates)
    if max_size is None and len(candidates) > 20:
        raise ValueError("too many candidates for exhaustive search; pass max_size")
    return _minimal_sets(lambda s: g.d_separated(xs, ys, s), candidates, max_size)


def minimal_adjustment_sets(q: CausalQuery, g: MDag, max_size: Optional[int] = None) -> List[FrozenSet[str]]:
    """Inclusion-minimal back-door adjustment sets for the query's treatments."""
    c = g.c_dag()
    x = c.check(q.treatments)
    y = c.check(q.outcomes)
    forbidden = c.descendants(x) | y
    candidates = [n for n in c.nodes if n not in forbidden and c.role(n) is not Role.LATENT]
    if max_size is None and len(candidates) > 20:
        raise ValueError("too many candidates for exhaustive search; pass max_size")
    cut = c.mutilated(outgoing=x)
    return _minimal_sets(lambda s: cut.d_separated(y, x, s), candidates, max_size)


# -- serialization --------------------------------------------------------------------


def query_from_dict(d: Mapping) -> CausalQuery:
    out = d["outcome"]
    if isinstance(out, str):
        outcomes, values = (out,), ()
    elif isinstance(out, Mapping):
        outcomes = (out["node"],)
        values = ((out["node"], out["value"]),) if "value" in out else ()
    else:
        outcomes, values = tuple(out), ()
    return CausalQuery(
        outcomes,
        tuple((n, v) for n, v in d.get("interventions", ())),
        values,
        tuple(d.get("given", ())),
        tuple(d.get("confounders", ())),
        d.get("name", ""),
    )


def query_to_dict(q: CausalQuery) -> dict:
    vals = dict(q.outcome_values)
    if len(q.outcomes) == 1:
        out: object = {"node": q.outcome, **({"value": vals[q.outcome]} if q.outcome in vals else {})}
    else:
        out = list(q.outcomes)
    d: dict = {"name": q.name, "outcome": out, "interventions": [list(p) for p in q.interventions]}
    if q.given:
        d["given"] = list(q.given)
    if q.confounders:
        d["confounders"] = list(q.confounders)
    return d


def load_query(path) -> CausalQuery:
    with open(path, encoding="utf-8") as fh:
        return query_from_dict(json.load(fh))
