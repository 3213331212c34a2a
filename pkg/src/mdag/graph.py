"""Missingness DAGs (m-DAGs): role-partitioned DAGs with d-separation queries.

Nodes are plain strings. Each node carries a role (fully observed, partially
observed, latent, missingness indicator, auxiliary) and an optional integer
time index used only for display, ordering and DGP wiring.
"""

from __future__ import annotations

import enum
import heapq
import json
from collections import deque
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Set, Tuple, Union

__all__ = [
    "Role",
    "NodeInfo",
    "MDag",
    "GraphError",
    "CycleDetected",
    "IllegalMEdge",
    "OrphanIndicator",
    "MissingIndicator",
    "UnknownNode",
    "GraphFormatError",
    "build_mdag",
    "d_separated",
    "ancestors",
    "c_components",
    "load_graph",
    "graph_from_dict",
    "graph_to_dict",
]


class GraphError(ValueError):
    """Base class for invalid graph structures."""


class CycleDetected(GraphError):
    def __init__(self, cycle: Sequence[str]):
        self.cycle = list(cycle)
        super().__init__("cycle detected: " + " -> ".join(self.cycle))


class IllegalMEdge(GraphError):
    def __init__(self, m_node: str, child: str):
        self.edge = (m_node, child)
        super().__init__(f"missingness indicator {m_node} may not be a parent of {child}")


class OrphanIndicator(GraphError):
    pass


class MissingIndicator(GraphError):
    pass


class UnknownNode(GraphError, KeyError):
    def __init__(self, names: Iterable[str]):
        self.names = sorted(names)
        super().__init__("unknown node(s): " + ", ".join(self.names))

    __str__ = ValueError.__str__


class GraphFormatError(GraphError):
    pass


class Role(str, enum.Enum):
    OBSERVED = "observed"  # V_o
    PARTIAL = "partial"  # V_m
    LATENT = "latent"  # U
    MISSINGNESS = "missingness"  # M
    AUXILIARY = "auxiliary"  # Z

    @property
    def substantive(self) -> bool:
        return self in (Role.OBSERVED, Role.PARTIAL, Role.LATENT)


@dataclass(frozen=True)
class NodeInfo:
    name: str
    role: Role
    time: Optional[int] = None
    target: Optional[str] = None  # V_m node indicated by an M node
    observed: bool = True  # auxiliaries may be unmeasured (e.g. technical issues)

    @property
    def label(self) -> str:
        return self.name if self.time is None else f"{self.name}@{self.time}"


NodeSpec = Union[NodeInfo, Tuple[str, Union[Role, str]], str]


def _sort_key(info: NodeInfo) -> Tuple[int, str]:
    return (-1 if info.time is None else info.time, info.name)


class MDag:
    """Immutable m-DAG.

    Validation (acyclicity, indicator wiring) runs on construction. Graphs
    without missingness indicators are allowed; ``require_indicators`` controls
    whether every partially observed node must have its indicator present.
    """

    def __init__(
        self,
        nodes: Iterable[NodeInfo],
        edges: Iterable[Tuple[str, str]],
        require_indicators: bool = True,
    ):
        info: Dict[str, NodeInfo] = {}
        for n in nodes:
            if n.name in info:
                raise GraphError(f"duplicate node {n.name}")
            info[n.name] = n
        edge_set = set()
        for u, v in edges:
            missing = {x for x in (u, v) if x not in info}
            if missing:
                raise UnknownNode(missing)
            edge_set.add((u, v))

        self._info = info
        self._edges = frozenset(edge_set)
        self._parents: Dict[str, Set[str]] = {n: set() for n in info}
        self._children: Dict[str, Set[str]] = {n: set() for n in info}
        for u, v in self._edges:
            self._parents[v].add(u)
            self._children[u].add(v)
        self._order = self._toposort()
        self._validate(require_indicators)

    # -- construction helpers -------------------------------------------------

    def _toposort(self) -> Tuple[str, ...]:
        indeg = {n: len(p) for n, p in self._parents.items()}
        key = {n: _sort_key(i) for n, i in self._info.items()}
        order: List[str] = []
        heap = [(key[n], n) for n, d in indeg.items() if d == 0]
        heapq.heapify(heap)
        while heap:
            _, n = heapq.heappop(heap)
            order.append(n)
            for c in self._children[n]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    heapq.heappush(heap, (key[c], c))
        if len(order) != len(self._info):
            raise CycleDetected(self._find_cycle(set(self._info) - set(order)))
        return tuple(order)

    def _find_cycle(self, remaining: Set[str]) -> List[str]:
        start = min(remaining)
        path, seen = [start], {start: 0}
        node = start
        while True:
            nxt = min(c for c in self._children[node] if c in remaining)
            if nxt in seen:
                return path[seen[nxt]:] + [nxt]
            seen[nxt] = len(path)
            path.append(nxt)
            node = nxt

    def _validate(self, require_indicators: bool) -> None:
        indicated: Dict[str, str] = {}
        for name, info in self._info.items():
            if info.role is not Role.MISSINGNESS:
                continue
            for child in self._children[name]:
                if self._info[child].role is not Role.MISSINGNESS:
                    raise IllegalMEdge(name, child)
            target = info.target
            if target is None or target not in self._info or self._info[target].role is not Role.PARTIAL:
                raise OrphanIndicator(f"missingness indicator {name} has no partially observed target")
            if target in indicated:
                raise OrphanIndicator(f"{target} has two indicators: {indicated[target]}, {name}")
            indicated[target] = name
        if require_indicators:
            lacking = [n for n in self.nodes_with_role(Role.PARTIAL) if n not in indicated]
            if lacking:
                raise MissingIndicator("no missingness indicator for " + ", ".join(lacking))
        self._indicator_of = indicated

    # -- accessors ------------------------------------------------------------

    @property
    def nodes(self) -> Tuple[str, ...]:
        """Nodes in deterministic topological order."""
        return self._order

    @property
    def edges(self) -> FrozenSet[Tuple[str, str]]:
        return self._edges

    def __contains__(self, name: object) -> bool:
        return name in self._info

    def __len__(self) -> int:
        return len(self._info)

    def __repr__(self) -> str:
        return f"MDag({len(self._info)} nodes, {len(self._edges)} edges)"

    def __eq__(self, other: object) -> bool:
        return isinstance(other, MDag) and self._info == other._info and self._edges == other._edges

    def __hash__(self) -> int:
        return hash((frozenset(self._info.items()), self._edges))

    def info(self, name: str) -> NodeInfo:
        try:
            return self._info[name]
        except KeyError:
            raise UnknownNode([name]) from None

    def role(self, name: str) -> Role:
        return self.info(name).role

    def time(self, name: str) -> Optional[int]:
        return self.info(name).time

    def parents(self, name: str) -> FrozenSet[str]:
        self.info(name)
        return frozenset(self._parents[name])

    def children(self, name: str) -> FrozenSet[str]:
        self.info(name)
        return frozenset(self._children[name])

    def nodes_with_role(self, *roles: Role) -> Tuple[str, ...]:
        return tuple(n for n in self._order if self._info[n].role in roles)

    def indicator(self, name: str) -> Optional[str]:
        """Missingness indicator of a partially observed node, if present."""
        self.info(name)
        return self._indicator_of.get(name)

    def target(self, m_node: str) -> str:
        info = self.info(m_node)
        if info.role is not Role.MISSINGNESS:
            raise GraphError(f"{m_node} is not a missingness indicator")
        return info.target  # type: ignore[return-value]

    @property
    def substantive(self) -> Tuple[str, ...]:
        """V = V_o ∪ V_m ∪ U in topological order."""
        return self.nodes_with_role(Role.OBSERVED, Role.PARTIAL, Role.LATENT)

    def sorted(self, names: Iterable[str]) -> List[str]:
        """Order ``names`` by topological position."""
        pos = self._position
        return sorted(names, key=pos.__getitem__)

    @property
    def _position(self) -> Dict[str, int]:
        pos = self.__dict__.get("_pos")
        if pos is None:
            pos = {n: i for i, n in enumerate(self._order)}
            self.__dict__["_pos"] = pos
        return pos

    def check(self, names: Iterable[str]) -> FrozenSet[str]:
        names = frozenset(names)
        missing = names - self._info.keys()
        if missing:
            raise UnknownNode(missing)
        return names

    # -- derived graphs -------------------------------------------------------

    def subgraph(self, keep: Iterable[str], require_indicators: bool = False) -> "MDag":
        keep = self.check(keep)
        infos = [self._info[n] for n in self._order if n in keep]
        # an indicator whose target was dropped no longer has a valid target
        infos = [i for i in infos if i.role is not Role.MISSINGNESS or i.target in keep]
        kept = {i.name for i in infos}
        edges = [(u, v) for u, v in self._edges if u in kept and v in kept]
        return MDag(infos, edges, require_indicators=require_indicators)

    def c_dag(self) -> "MDag":
        """Induced subgraph on the substantive variables V_o ∪ V_m ∪ U."""
        return self.subgraph(self.substantive)

    def without_edges(self, drop: Iterable[Tuple[str, str]]) -> "MDag":
        drop = set(drop)
        return MDag(
            (self._info[n] for n in self._order),
            (e for e in self._edges if e not in drop),
            require_indicators=False,
        )

    def with_edges(self, add: Iterable[Tuple[str, str]]) -> "MDag":
        return MDag(
            (self._info[n] for n in self._order),
            set(self._edges) | set(add),
            require_indicators=False,
        )

    def mutilated(self, incoming: Iterable[str] = (), outgoing: Iterable[str] = ()) -> "MDag":
        """Remove edges into ``incoming`` and out of ``outgoing``."""
        inc, out = self.check(incoming), self.check(outgoing)
        return self.without_edges(e for e in self._edges if e[1] in inc or e[0] in out)

    # -- queries --------------------------------------------------------------

    def ancestors(self, names: Iterable[str]) -> FrozenSet[str]:
        return _closure(self.check(names), self._parents)

    def descendants(self, names: Iterable[str]) -> FrozenSet[str]:
        return _closure(self.check(names), self._children)

    def d_separated(self, xs: Iterable[str], ys: Iterable[str], zs: Iterable[str] = ()) -> bool:
        """Reachability ("Bayes-ball") d-separation test."""
        xs, ys, zs = self._disjoint(xs, ys, zs)
        if not xs or not ys:
            return True
        return not (self._reachable(xs, zs) & ys)

    def active_path(self, xs: Iterable[str], ys: Iterable[str], zs: Iterable[str] = ()) -> Optional[List[str]]:
        """A d-connecting path from ``xs`` to ``ys`` given ``zs``, or None."""
        xs, ys, zs = self._disjoint(xs, ys, zs)
        anc_z = _closure(zs, self._parents)
        start = [(x, "up") for x in sorted(xs)]
        prev: Dict[Tuple[str, str], Optional[Tuple[str, str]]] = {s: None for s in start}
        queue = deque(start)
        while queue:
            state = queue.popleft()
            node, d = state
            if node in ys:
                path = []
                cur: Optional[Tuple[str, str]] = state
                while cur is not None:
                    path.append(cur[0])
                    cur = prev[cur]
                return path[::-1]
            for nxt in self._moves(node, d, zs, anc_z):
                if nxt not in prev:
                    prev[nxt] = state
                    queue.append(nxt)
        return None

    def _disjoint(self, xs, ys, zs):
        xs, ys, zs = self.check(xs), self.check(ys), self.check(zs)
        if xs & ys or xs & zs or ys & zs:
            raise GraphError("X, Y and Z must be pairwise disjoint")
        return xs, ys, zs

    def _moves(self, node: str, d: str, zs: FrozenSet[str], anc_z: FrozenSet[str]):
        # "up": entered from a child (or start); "down": entered from a parent
        if d == "up":
            if node in zs:
                return
            for p in sorted(self._parents[node]):
                yield (p, "up")
            for c in sorted(self._children[node]):
                yield (c, "down")
        else:
            if node not in zs:
                for c in sorted(self._children[node]):
                    yield (c, "down")
            if node in anc_z:
                for p in sorted(self._parents[node]):
                    yield (p, "up")

    def _reachable(self, xs: FrozenSet[str], zs: FrozenSet[str]) -> Set[str]:
        anc_z = _closure(zs, self._parents)
        seen = {(x, "up") for x in xs}
        stack = list(seen)
        reached: Set[str] = set()
        while stack:
            node, d = stack.pop()
            if node not in zs:
                reached.add(node)
            for nxt in self._moves(node, d, zs, anc_z):
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return reached

    def undirected_path(self, sources: Iterable[str], targets: Iterable[str]) -> Optional[List[str]]:
        """Shortest path ignoring edge direction, BFS with sorted neighbours."""
        sources, targets = self.check(sources), self.check(targets)
        prev: Dict[str, Optional[str]] = {s: None for s in sources}
        queue = deque(self.sorted(sources))
        while queue:
            node = queue.popleft()
            if node in targets:
                path = []
                cur: Optional[str] = node
                while cur is not None:
                    path.append(cur)
                    cur = prev[cur]
                return path[::-1]
            for nb in self.sorted(self._parents[node] | self._children[node]):
                if nb not in prev:
                    prev[nb] = node
                    queue.append(nb)
        return None

    def latent_projection(self, latent: Iterable[str]) -> Tuple[Set[Tuple[str, str]], Set[FrozenSet[str]]]:
        """Directed and bidirected edges of the latent projection onto the non-latent nodes."""
        latent = self.check(latent)
        directed: Set[Tuple[str, str]] = set()
        bidirected: Set[FrozenSet[str]] = set()
        for v in self._order:
            if v in latent:
                continue
            for child in self._observed_reach(v, latent):
                directed.add((v, child))
        for u in self._order:
            if u not in latent:
                continue
            reach = sorted(self._observed_reach(u, latent))
            for i, a in enumerate(reach):
                for b in reach[i + 1:]:
                    bidirected.add(frozenset((a, b)))
        return directed, bidirected

    def _observed_reach(self, start: str, latent: FrozenSet[str]) -> Set[str]:
        out: Set[str] = set()
        stack = list(self._children[start])
        seen = set(stack)
        while stack:
            n = stack.pop()
            if n in latent:
                for c in self._children[n]:
                    if c not in seen:
                        seen.add(c)
                        stack.append(c)
            else:
                out.add(n)
        return out

    def c_components(self, latent: Iterable[str]) -> List[FrozenSet[str]]:
        latent = self.check(latent)
        _, bidirected = self.latent_projection(latent)
        observed = [n for n in self._order if n not in latent]
        parent = {n: n for n in observed}

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for pair in bidirected:
            a, b = sorted(pair)
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
        groups: Dict[str, Set[str]] = {}
        for n in observed:
            groups.setdefault(find(n), set()).add(n)
        pos = self._position
        comps = [frozenset(g) for g in groups.values()]
        return sorted(comps, key=lambda c: min(pos[n] for n in c))


def _closure(start: Iterable[str], nbrs: Mapping[str, Set[str]]) -> FrozenSet[str]:
    seen = set(start)
    stack = list(seen)
    while stack:
        n = stack.pop()
        for m in nbrs[n]:
            if m not in seen:
                seen.add(m)
                stack.append(m)
    return frozenset(seen)


# -- functional API ---------------------------------------------------------


def _as_info(spec: NodeSpec) -> NodeInfo:
    if isinstance(spec, NodeInfo):
        return spec
    if isinstance(spec, str):
        return NodeInfo(spec, Role.OBSERVED)
    name, role = spec
    return NodeInfo(name, Role(role))


def build_mdag(
    nodes: Iterable[NodeSpec],
    edges: Iterable[Tuple[str, str]],
    require_indicators: bool = True,
) -> MDag:
    """Build and validate an m-DAG.

    ``nodes`` may be :class:`NodeInfo` objects, ``(name, role)`` pairs or bare
    names (fully observed). A missingness indicator given as a pair gets its
    target inferred from the ``M_<target>`` naming convention.
    """
    infos = []
    for spec in nodes:
        info = _as_info(spec)
        if info.role is Role.MISSINGNESS and info.target is None and info.name.startswith("M_"):
            info = NodeInfo(info.name, info.role, info.time, info.name[2:], info.observed)
        infos.append(info)
    return MDag(infos, edges, require_indicators=require_indicators)


def d_separated(g: MDag, xs: Iterable[str], ys: Iterable[str], zs: Iterable[str] = ()) -> bool:
    return g.d_separated(xs, ys, zs)


def ancestors(g: MDag, names: Iterable[str]) -> FrozenSet[str]:
    return g.ancestors(names)


def c_components(g: MDag, latent: Iterable[str]) -> List[FrozenSet[str]]:
    return g.c_components(latent)


# -- JSON format --------------------------------------------------------------


def graph_from_dict(data: Mapping, require_indicators: bool = True) -> MDag:
    try:
        raw_nodes = data["nodes"]
        raw_edges = data.get("edges", [])
    except (KeyError, TypeError, AttributeError) as exc:
        raise GraphFormatError("graph must be an object with 'nodes' and 'edges'") from exc
    infos = []
    for i, n in enumerate(raw_nodes):
        try:
            role = Role(n["role"])
            infos.append(
                NodeInfo(
                    name=str(n["name"]),
                    role=role,
                    time=n.get("time"),
                    target=n.get("target"),
                    observed=bool(n.get("observed", role is not Role.LATENT)),
                )
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise GraphFormatError(f"node #{i}: {exc}") from exc
    edges = []
    for i, e in enumerate(raw_edges):
        if not (isinstance(e, (list, tuple)) and len(e) == 2):
            raise GraphFormatError(f"edge #{i} must be a [from, to] pair")
        edges.append((str(e[0]), str(e[1])))
    return MDag(infos, edges, require_indicators=require_indicators)


def graph_to_dict(g: MDag) -> dict:
    nodes = []
    for n in g.nodes:
        info = g.info(n)
        d: dict = {"name": n, "role": info.role.value}
        if info.time is not None:
            d["time"] = info.time
        if info.target is not None:
            d["target"] = info.target
        if info.role is Role.AUXILIARY and not info.observed:
            d["observed"] = False
        nodes.append(d)
    pos = {n: i for i, n in enumerate(g.nodes)}
    edges = sorted(g.edges, key=lambda e: (pos[e[0]], pos[e[1]]))
    return {"nodes": nodes, "edges": [list(e) for e in edges]}


def load_graph(path, require_indicators: bool = True) -> MDag:
    with open(path) as fh:
        text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GraphFormatError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return graph_from_dict(data, require_indicators=require_indicators)
