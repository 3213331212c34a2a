"""Graphical models for missing data: m-DAGs, identification, recoverability and simulation."""

from .graph import MDag, Role, NodeInfo, build_mdag, load_graph
from .taxonomy import classify_mechanism, is_closed
from .identify import CausalQuery, identify, idc, backdoor_gformula
from .recover import recover_estimand, recover_query
from .estimand import pretty_print, evaluate, DiscreteJoint

__version__ = "0.1.0"
