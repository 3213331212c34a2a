"""Graphical missingness taxonomy (MCAR / MAR / MNAR) and closed mechanisms."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

from .graph import GraphError, MDag, Role

__all__ = [
    "Mechanism",
    "MechanismClass",
    "ClosednessReport",
    "NotClosed",
    "classify_mechanism",
    "is_closed",
    "closed_implies_independence_check",
]


class NotClosed(GraphError):
    pass


class Mechanism(str, enum.Enum):
    MCAR = "MCAR"
    MAR = "MAR"
    MNAR = "MNAR"


@dataclass(frozen=True)
class MechanismClass:
    mechanism: Mechanism
    # (indicator, parent) pairs that push the class beyond MCAR
    evidence: Tuple[Tuple[str, str], ...] = ()

    def __str__(self) -> str:
        return self.mechanism.value


@dataclass(frozen=True)
class ClosednessReport:
    closed: bool
    witness_path: Optional[Tuple[str, ...]] = None


def classify_mechanism(g: MDag) -> MechanismClass:
    """Classify by the roles of missingness-indicator parents.

    MCAR: indicators only have indicator parents. MAR: every parent is fully
    observed or an indicator. MNAR otherwise. For MAR the evidence is every
    (indicator, fully observed parent) pair; for MNAR it is every pair whose
    parent lies outside V_o ∪ M (partially observed, latent or auxiliary).
    """
    outside_m: List[Tuple[str, str]] = []
    mnar = False
    for m in g.nodes_with_role(Role.MISSINGNESS):
        for p in g.sorted(g.parents(m)):
            role = g.role(p)
            if role is Role.MISSINGNESS:
                continue
            outside_m.append((m, p))
            if role is not Role.OBSERVED:
                mnar = True
    if not outside_m:
        return MechanismClass(Mechanism.MCAR)
    if not mnar:
        return MechanismClass(Mechanism.MAR, tuple(outside_m))
    offending = tuple(e for e in outside_m if g.role(e[1]) is not Role.OBSERVED)
    return MechanismClass(Mechanism.MNAR, offending)


def is_closed(g: MDag) -> ClosednessReport:
    """No (undirected) path may connect V = V_o ∪ V_m ∪ U to M."""
    v_side = g.substantive
    m_side = g.nodes_with_role(Role.MISSINGNESS)
    if not v_side or not m_side:
        return ClosednessReport(True)
    path = g.undirected_path(v_side, m_side)
    if path is None:
        return ClosednessReport(True)
    return ClosednessReport(False, tuple(path))


def closed_implies_independence_check(g: MDag) -> bool:
    """Re-derive V_i ⊥ M_j (no conditioning) for all pairs of a closed graph."""
    report = is_closed(g)
    if not report.closed:
        raise NotClosed("missingness mechanism is not closed; witness: " + " - ".join(report.witness_path or ()))
    ms = g.nodes_with_role(Role.MISSINGNESS)
    return all(g.d_separated({v}, {m}) for v in g.substantive for m in ms)
