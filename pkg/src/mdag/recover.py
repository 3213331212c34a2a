"""Recoverability of identified estimands from the available-data distribution.

Each conditional factor P(T | C) of an identified estimand is rewritten so that
all its partially observed variables are conditioned on their indicators being
zero. Three strategies are tried in order: the closed-mechanism shortcut,
direct conditioning justified by d-separation, and expansion over a set W of
observed auxiliary variables, P(T | C) = Σ_W P(T | C, W) P(W | C), with the
second factor recovered recursively.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

from .estimand import Conditional, Expression, pretty_print, product, sum_over
from .graph import GraphError, MDag, Role
from .identify import CausalQuery, IdentificationResult, identify
from .taxonomy import is_closed

__all__ = [
    "NotIdentifiedInput",
    "NotRecoverableInput",
    "Step",
    "FailureRecord",
    "FactorRecovery",
    "RecoverabilityReport",
    "FactorPlan",
    "recover_estimand",
    "recover_query",
    "available_case_plan",
    "STRATEGY_NOTE",
]

STRATEGY_NOTE = (
    "not recoverable by the implemented strategy set (direct conditioning, closed-mechanism shortcut, "
    "auxiliary-set expansion up to depth 2); other factorizations were not searched"
)

MAX_DEPTH = 2
MAX_W = 3


class NotIdentifiedInput(GraphError):
    pass


class NotRecoverableInput(ValueError):
    pass


@dataclass(frozen=True)
class Step:
    rewrite: str
    justification: str

    def __str__(self) -> str:
        return f"{self.rewrite}    ({self.justification})"


@dataclass(frozen=True)
class FailureRecord:
    factor: Conditional
    indicator: str
    # (parent, indicator) edges that block discharge; the first one is the headline
    reasons: Tuple[Tuple[str, str], ...]
    detail: str = ""

    @property
    def reason(self) -> Tuple[str, str]:
        return self.reasons[0]

    def __str__(self) -> str:
        p, m = self.reason
        return f"{p} is a parent of {m}"


@dataclass(frozen=True)
class FactorRecovery:
    original: Conditional
    recovered: Optional[Expression]
    failure: Optional[FailureRecord] = None
    steps: Tuple[Step, ...] = ()


@dataclass(frozen=True)
class RecoverabilityReport:
    recoverable: bool
    per_factor: Tuple[FactorRecovery, ...]
    estimand: Optional[Expression] = None
    recovered_estimand: Optional[Expression] = None
    closed: bool = False
    note: str = ""
    indicator_targets: Tuple[Tuple[str, str], ...] = ()

    def __post_init__(self):
        if self.recoverable != all(f.recovered is not None for f in self.per_factor):
            raise ValueError("verdict must agree with the per-factor results")

    @property
    def verdict(self) -> str:
        return "Recoverable" if self.recoverable else "NotRecoverable"

    @property
    def failures(self) -> List[FailureRecord]:
        return [f.failure for f in self.per_factor if f.failure is not None]


def _fmt_set(names: Sequence[str]) -> str:
    names = list(names)
    return names[0] if len(names) == 1 else "{" + ", ".join(names) + "}"


def _indep(t, ms, c) -> str:
    cond = f" | {', '.join(c)}" if c else ""
    return f"{_fmt_set(t)} ⊥ {_fmt_set(ms)}{cond}"


class _Recoverer:
    def __init__(self, g: MDag):
        self.g = g
        self.closed = is_closed(g).closed
        self.partial = set(g.nodes_with_role(Role.PARTIAL))
        self.aux = [n for n in g.nodes if g.role(n) is Role.AUXILIARY and g.info(n).observed]

    def indicators(self, names) -> Tuple[str, ...]:
        return tuple(self.g.indicator(n) for n in self.g.sorted(set(names) & self.partial))

    def recover(self, c: Conditional, depth: int = 0) -> FactorRecovery:
        g = self.g
        flagged = Conditional(c.targets, c.given, c.fixed, c.po, ())
        ms = self.indicators(c.variables)
        bare = Conditional(c.targets, c.given, c.fixed, (), ())
        if not ms:
            return FactorRecovery(c, bare, None, (Step(f"{pretty_print(flagged)} = {pretty_print(bare)}", "no partially observed variables"),))
        out = Conditional(c.targets, c.given, c.fixed, (), ms)
        if g.d_separated(c.targets, ms, c.given):
            why = _indep(c.targets, ms, c.given)
            if self.closed:
                why = f"closed missingness mechanism; {why}"
            mid = Conditional(c.targets, c.given, c.fixed, c.po, ms)
            steps = (
                Step(f"{pretty_print(flagged)} = {pretty_print(mid)}", why),
                Step(f"= {pretty_print(out)}", "by consistency"),
            )
            return FactorRecovery(c, out, None, steps)
        first_failure: Optional[FactorRecovery] = None
        if depth < MAX_DEPTH:
            for w in self._expansion_sets(c, ms):
                attempt = self._expand(c, ms, w, depth)
                if attempt.recovered is not None:
                    return attempt
                first_failure = first_failure or attempt
        if first_failure is not None:
            return first_failure
        return FactorRecovery(c, None, self._direct_failure(c, ms), ())

    def _expansion_sets(self, c: Conditional, ms: Tuple[str, ...]):
        g = self.g
        rel = g.ancestors(set(c.variables) | set(ms))
        pool = [z for z in self.aux if z in rel and z not in c.variables]
        for k in range(1, min(MAX_W, len(pool)) + 1):
            for w in itertools.combinations(pool, k):
                if g.d_separated(c.targets, ms, set(c.given) | set(w)):
                    yield w

    def _expand(self, c: Conditional, ms, w: Tuple[str, ...], depth: int) -> FactorRecovery:
        given = c.given + w
        top = Conditional(c.targets, given, c.fixed, (), ms)
        wc = Conditional(w, c.given, c.fixed, c.po & set(c.given), ())
        sub = self.recover(wc, depth + 1)
        flagged = Conditional(c.targets, c.given, c.fixed, c.po, ())
        expanded = sum_over(w, product([Conditional(c.targets, given, c.fixed, c.po, ()), wc]))
        steps = [
            Step(f"{pretty_print(flagged)} = {pretty_print(expanded)}", f"sum over auxiliary {_fmt_set(w)}"),
            Step(f"P({', '.join(c.targets)} | ...) = {pretty_print(top)}", f"{_indep(c.targets, ms, given)}; by consistency"),
        ]
        steps.extend(sub.steps)
        if sub.recovered is None:
            f = sub.failure
            assert f is not None
            failure = FailureRecord(c, f.indicator, f.reasons, f"expansion over {_fmt_set(w)} fails: {pretty_print(wc)} {f.detail}".strip())
            return FactorRecovery(c, None, failure, tuple(steps))
        return FactorRecovery(c, sum_over(w, product([top, sub.recovered])), None, tuple(steps))

    def _direct_failure(self, c: Conditional, ms: Sequence[str]) -> FailureRecord:
        g = self.g
        pos = {n: i for i, n in enumerate(g.nodes)}
        direct = sorted(((t, m) for m in ms for t in c.targets if t in g.parents(m)), key=lambda e: -pos[g.target(e[1])])
        blocking = [m for m in ms if not g.d_separated(c.targets, {m}, c.given)] or list(ms)
        if direct:
            return FailureRecord(c, direct[0][1], tuple(direct), "a target is a parent of an indicator to discharge")
        path = g.active_path(c.targets, blocking, c.given)
        m = path[-1] if path else blocking[0]
        reasons = ((path[-2], m),) if path and len(path) > 1 else ((c.targets[0], m),)
        return FailureRecord(c, m, reasons, "open path: " + " - ".join(path or ()))


def _check_input(e: Expression, g: MDag) -> None:
    banned = set(g.nodes_with_role(Role.LATENT, Role.MISSINGNESS))
    for c in e.conditionals():
        g.check(c.variables)
        bad = banned & set(c.variables)
        if bad or c.indicators:
            raise NotIdentifiedInput(f"estimand references latent or indicator nodes: {sorted(bad | set(c.indicators))}")


def recover_estimand(e: Expression, g: MDag) -> RecoverabilityReport:
    """Factor-by-factor recovery of ``e`` (an identified estimand) under ``g``."""
    _check_input(e, g)
    rec = _Recoverer(g)
    results: Dict[Conditional, FactorRecovery] = {}
    for c in e.conditionals():
        if c not in results:
            results[c] = rec.recover(c)
    pos = {n: i for i, n in enumerate(g.nodes)}
    per = tuple(sorted(results.values(), key=lambda r: min(pos[t] for t in r.original.targets)))
    ok = all(r.recovered is not None for r in per)
    recovered = e.map_conditionals(lambda c: results[c].recovered) if ok else None
    targets = tuple((m, g.target(m)) for m in g.nodes_with_role(Role.MISSINGNESS))
    return RecoverabilityReport(ok, per, e, recovered, rec.closed, "" if ok else STRATEGY_NOTE, targets)


def recover_query(q: CausalQuery, g: MDag, method: str = "idc") -> Tuple[IdentificationResult, RecoverabilityReport]:
    ident = identify(q, g, method)
    if not ident.identifiable:
        note = "not identifiable, hence not recoverable: " + (ident.failure_witness or "")
        return ident, RecoverabilityReport(False, (FactorRecovery(Conditional(q.outcomes), None),), None, None, is_closed(g).closed, note)
    return ident, recover_estimand(ident.estimand, g)


@dataclass(frozen=True)
class FactorPlan:
    factor: Conditional
    variables: Tuple[str, ...]
    # partially observed variables whose joint observedness selects the rows
    must_observe: Tuple[str, ...]


def available_case_plan(report: RecoverabilityReport) -> List[FactorPlan]:
    """Per recovered conditional, the variables that must be jointly observed."""
    if not report.recoverable or report.recovered_estimand is None:
        raise NotRecoverableInput("available-case plans need a recoverable report")
    target = dict(report.indicator_targets)
    plans: List[FactorPlan] = []
    seen = set()
    for c in report.recovered_estimand.conditionals():
        if c in seen:
            continue
        seen.add(c)
        variables = c.variables
        observed_via = {target[m] for m in c.indicators}
        must = tuple(v for v in variables if v in observed_via)
        plans.append(FactorPlan(c, variables, must))
    return plans
