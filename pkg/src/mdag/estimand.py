"""Probability-expression algebra and exact evaluation on discrete joints.

Expressions are immutable trees of :class:`Conditional`, :class:`Product`,
:class:`SumOver` and :class:`Quotient` nodes. A conditional may pin variables
to values (``EFV_6 = a``), flag partially observed variables with the
``^{M=0}`` potential-outcome annotation, and carry explicit ``M_X = 0``
indicator conditions once recovered.
"""

from __future__ import annotations

import itertools
import re
import string
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .graph import MDag

__all__ = [
    "canonical",
    "structurally_equal",
    "Expression",
    "Conditional",
    "Product",
    "SumOver",
    "Quotient",
    "Marginal",
    "Factor",
    "DiscreteJoint",
    "PositivityViolation",
    "UnboundVariable",
    "ExpressionSyntaxError",
    "evaluate",
    "truncated_factorization",
    "pretty_print",
    "parse",
    "expression_to_dict",
    "expression_from_dict",
    "product",
    "sum_over",
]

Value = Union[int, float, str]


class PositivityViolation(ArithmeticError):
    pass


class UnboundVariable(KeyError):
    pass


class ExpressionSyntaxError(ValueError):
    pass


# -- AST ----------------------------------------------------------------------


class Expression:
    def free_vars(self) -> FrozenSet[str]:
        raise NotImplementedError

    def bind(self, values: Mapping[str, Value]) -> "Expression":
        """Pin free variables to values (used for interventions and outcomes)."""
        raise NotImplementedError

    def conditionals(self) -> List["Conditional"]:
        raise NotImplementedError

    def map_conditionals(self, fn) -> "Expression":
        raise NotImplementedError

    @property
    def recovered_form(self) -> bool:
        return all(not c.po for c in self.conditionals())

    def __str__(self) -> str:
        return pretty_print(self)


@dataclass(frozen=True)
class Conditional(Expression):
    targets: Tuple[str, ...]
    given: Tuple[str, ...] = ()
    fixed: Tuple[Tuple[str, Value], ...] = ()
    po: FrozenSet[str] = frozenset()
    indicators: Tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "given", tuple(self.given))
        object.__setattr__(self, "fixed", tuple(sorted(dict(self.fixed).items())))
        object.__setattr__(self, "po", frozenset(self.po))
        object.__setattr__(self, "indicators", tuple(self.indicators))
        if set(self.targets) & set(self.given):
            raise ValueError(f"variables both target and conditioning: {set(self.targets) & set(self.given)}")
        if not self.targets:
            raise ValueError("conditional needs at least one target")

    @property
    def fixed_map(self) -> Dict[str, Value]:
        return dict(self.fixed)

    @property
    def variables(self) -> Tuple[str, ...]:
        return self.targets + self.given

    def free_vars(self) -> FrozenSet[str]:
        return frozenset(self.variables) - set(self.fixed_map)

    def bind(self, values: Mapping[str, Value]) -> "Conditional":
        new = {k: v for k, v in values.items() if k in self.free_vars()}
        if not new:
            return self
        return Conditional(self.targets, self.given, {**self.fixed_map, **new}, self.po, self.indicators)

    def conditionals(self) -> List["Conditional"]:
        return [self]

    def map_conditionals(self, fn) -> Expression:
        return fn(self)


@dataclass(frozen=True)
class Product(Expression):
    factors: Tuple[Expression, ...]

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))

    def free_vars(self) -> FrozenSet[str]:
        out: FrozenSet[str] = frozenset()
        for f in self.factors:
            out |= f.free_vars()
        return out

    def bind(self, values):
        return Product(tuple(f.bind(values) for f in self.factors))

    def conditionals(self):
        return [c for f in self.factors for c in f.conditionals()]

    def map_conditionals(self, fn):
        return product(f.map_conditionals(fn) for f in self.factors)


@dataclass(frozen=True)
class SumOver(Expression):
    vars: Tuple[str, ...]
    body: Expression

    def __post_init__(self):
        object.__setattr__(self, "vars", tuple(self.vars))
        missing = set(self.vars) - self.body.free_vars()
        if missing:
            raise ValueError(f"summation variables not free in body: {sorted(missing)}")

    def free_vars(self):
        return self.body.free_vars() - set(self.vars)

    def bind(self, values):
        inner = {k: v for k, v in values.items() if k not in self.vars}
        return SumOver(self.vars, self.body.bind(inner))

    def conditionals(self):
        return self.body.conditionals()

    def map_conditionals(self, fn):
        return sum_over(self.vars, self.body.map_conditionals(fn))


@dataclass(frozen=True)
class Quotient(Expression):
    numerator: Expression
    denominator: Expression

    def free_vars(self):
        return self.numerator.free_vars() | self.denominator.free_vars()

    def bind(self, values):
        return Quotient(self.numerator.bind(values), self.denominator.bind(values))

    def conditionals(self):
        return self.numerator.conditionals() + self.denominator.conditionals()

    def map_conditionals(self, fn):
        return Quotient(self.numerator.map_conditionals(fn), self.denominator.map_conditionals(fn))


def Marginal(*names: str, **fixed: Value) -> Conditional:
    return Conditional(tuple(names), (), fixed)


def canonical(e: Expression):
    """Order-insensitive structural key: equal keys mean equal expressions up to
    reordering of targets, conditioning sets, indicators, product factors and
    summation variables."""
    if isinstance(e, Conditional):
        return ("P", frozenset(e.targets), frozenset(e.given), e.fixed, e.po, frozenset(e.indicators))
    if isinstance(e, Product):
        keys = [canonical(f) for f in e.factors]
        return ("*", frozenset((k, keys.count(k)) for k in keys))
    if isinstance(e, SumOver):
        return ("sum", frozenset(e.vars), canonical(e.body))
    if isinstance(e, Quotient):
        return ("/", canonical(e.numerator), canonical(e.denominator))
    raise TypeError(f"not an expression: {e!r}")


def structurally_equal(a: Expression, b: Expression) -> bool:
    return canonical(a) == canonical(b)


def product(factors: Iterable[Expression]) -> Expression:
    """Flattening product constructor; a single factor is returned as is."""
    flat: List[Expression] = []
    for f in factors:
        if isinstance(f, Product):
            flat.extend(f.factors)
        else:
            flat.append(f)
    if len(flat) == 1:
        return flat[0]
    return Product(tuple(flat))


def sum_over(names: Iterable[str], body: Expression) -> Expression:
    """Summation constructor that drops vacuous sums and merges nested ones."""
    names = tuple(n for n in names if n in body.free_vars())
    if not names:
        return body
    if isinstance(body, SumOver):
        return SumOver(names + body.vars, body.body)
    return SumOver(names, body)


# -- discrete tables ----------------------------------------------------------


@dataclass(frozen=True)
class Factor:
    """A dense table indexed by named variables."""

    vars: Tuple[str, ...]
    table: np.ndarray
    domains: Mapping[str, Tuple[Any, ...]]

    def aligned(self, order: Sequence[str]) -> np.ndarray:
        perm = [self.vars.index(v) for v in order if v in self.vars]
        t = np.transpose(self.table, perm) if perm else self.table
        shape = [len(self.domains[v]) if v in self.vars else 1 for v in order]
        return np.reshape(t, shape)

    def sum_out(self, names: Iterable[str]) -> "Factor":
        names = [n for n in names if n in self.vars]
        if not names:
            return self
        axes = tuple(self.vars.index(n) for n in names)
        keep = tuple(v for v in self.vars if v not in names)
        return Factor(keep, np.asarray(np.sum(self.table, axis=axes), dtype=self.table.dtype), self.domains)

    def fix(self, values: Mapping[str, Any]) -> "Factor":
        idx: List[Any] = []
        keep = []
        for v in self.vars:
            if v in values:
                idx.append(_value_index(self.domains[v], values[v], v))
            else:
                idx.append(slice(None))
                keep.append(v)
        return Factor(tuple(keep), np.asarray(self.table[tuple(idx)], dtype=self.table.dtype), self.domains)

    def value(self, **assignment) -> Any:
        f = self.fix(assignment)
        if f.vars:
            raise UnboundVariable(f"unassigned variables {f.vars}")
        return f.table[()]

    def transpose(self, order: Sequence[str]) -> "Factor":
        if set(order) != set(self.vars):
            raise ValueError("order must list exactly the factor variables")
        return Factor(tuple(order), self.aligned(order), self.domains)

    def allclose(self, other: "Factor", atol: float = 1e-9) -> bool:
        if set(self.vars) != set(other.vars):
            return False
        a = np.asarray(self.table, dtype=float)
        b = np.asarray(other.transpose(self.vars).table, dtype=float)
        return bool(np.allclose(a, b, rtol=0.0, atol=atol))


def _value_index(domain: Sequence[Any], value: Any, name: str) -> int:
    try:
        return list(domain).index(value)
    except ValueError:
        raise KeyError(f"value {value!r} not in the domain of {name}") from None


def _multiply(factors: Sequence[Factor], domains) -> Factor:
    order: List[str] = []
    for f in factors:
        order.extend(v for v in f.vars if v not in order)
    out = None
    for f in factors:
        t = f.aligned(order)
        out = t if out is None else out * t
    if out is None:
        return Factor((), np.array(1.0), domains)
    return Factor(tuple(order), out, domains)


def _divide(num: Factor, den: Factor, what: str) -> Factor:
    order = list(num.vars) + [v for v in den.vars if v not in num.vars]
    d = den.aligned(order)
    if np.any(d == 0):
        raise PositivityViolation(f"zero-probability conditioning event in {what}")
    return Factor(tuple(order), num.aligned(order) / d, num.domains)


class DiscreteJoint:
    """Joint distribution over finitely many discrete variables (dense)."""

    MAX_VARS = 24

    def __init__(self, variables: Sequence[str], domains: Mapping[str, Sequence[Any]], table: np.ndarray, check: bool = True):
        self.variables = tuple(variables)
        self.domains = {v: tuple(domains[v]) for v in self.variables}
        table = np.asarray(table)
        if table.shape != tuple(len(self.domains[v]) for v in self.variables):
            raise ValueError("table shape does not match the variable domains")
        if len(self.variables) > self.MAX_VARS:
            raise ValueError(f"dense joints are capped at {self.MAX_VARS} variables")
        if check:
            if np.any(table < 0):
                raise ValueError("negative probabilities")
            total = np.sum(table)
            if abs(float(total) - 1.0) > 1e-12:
                raise ValueError(f"probabilities sum to {float(total)!r}, not 1")
        self.table = table
        self._cache: Dict[FrozenSet[str], Factor] = {}

    @property
    def exact(self) -> bool:
        return self.table.dtype == object

    def factor(self) -> Factor:
        return Factor(self.variables, self.table, self.domains)

    def marginal(self, names: Iterable[str]) -> Factor:
        names = frozenset(names)
        missing = names - set(self.variables)
        if missing:
            raise UnboundVariable(f"variables not in the joint: {sorted(missing)}")
        hit = self._cache.get(names)
        if hit is None:
            drop = [v for v in self.variables if v not in names]
            hit = self.factor().sum_out(drop)
            self._cache[names] = hit
        return hit

    def conditional(self, targets: Sequence[str], given: Sequence[str] = ()) -> Factor:
        joint = self.marginal(set(targets) | set(given))
        return _divide(joint, joint.sum_out(targets), f"P({targets} | {given})")

    @classmethod
    def from_cpts(cls, g: MDag, cpts: Mapping[str, np.ndarray], domains: Mapping[str, Sequence[Any]]) -> "DiscreteJoint":
        """Multiply CPTs ``cpts[v][pa..., v]`` (parents in graph topological order)."""
        factors = []
        for v in g.nodes:
            pa = g.sorted(g.parents(v))
            factors.append(Factor(tuple(pa) + (v,), np.asarray(cpts[v]), domains))
        joint = _multiply(factors, domains)
        return cls(g.nodes, domains, joint.aligned(g.nodes))

    @classmethod
    def random(cls, g: MDag, rng: np.random.Generator, card: int = 2, exact: bool = False, floor: float = 0.05) -> "DiscreteJoint":
        """A random joint Markov to ``g`` with strictly positive CPTs."""
        domains = {v: tuple(range(card)) for v in g.nodes}
        cpts = {}
        for v in g.nodes:
            pa = g.sorted(g.parents(v))
            shape = (card,) * len(pa) + (card,)
            if exact:
                raw = rng.integers(1, 20, size=shape)
                obj = np.empty(shape, dtype=object)
                sums = raw.sum(axis=-1, keepdims=True)
                for idx in np.ndindex(shape):
                    obj[idx] = Fraction(int(raw[idx]), int(sums[idx[:-1] + (0,)]))
                cpts[v] = obj
            else:
                raw = floor + rng.random(shape)
                cpts[v] = raw / raw.sum(axis=-1, keepdims=True)
        return cls.from_cpts(g, cpts, domains)


# -- evaluation ---------------------------------------------------------------


def evaluate(e: Expression, joint: DiscreteJoint, params: Optional[Mapping[str, Value]] = None) -> Factor:
    """Exact evaluation of ``e`` on ``joint``; returns a table over free variables.

    Symbolic fixed values (``EFV_6 = a``) are resolved through ``params``.
    Variables carrying the ``^{M=0}`` flag are read as the underlying variable.
    """
    params = dict(params or {})
    return _eval(e, joint, params)


def _resolve(value: Value, params: Mapping[str, Value]) -> Any:
    if isinstance(value, str):
        if value not in params:
            raise UnboundVariable(f"no value supplied for parameter {value!r}")
        return params[value]
    return value


def _eval(e: Expression, joint: DiscreteJoint, params) -> Factor:
    if isinstance(e, Conditional):
        return _eval_conditional(e, joint, params)
    if isinstance(e, Product):
        return _multiply([_eval(f, joint, params) for f in e.factors], joint.domains)
    if isinstance(e, SumOver):
        if isinstance(e.body, Product) and not joint.exact:
            return _eval_sum_product(e, joint, params)
        return _eval(e.body, joint, params).sum_out(e.vars)
    if isinstance(e, Quotient):
        num = _eval(e.numerator, joint, params)
        den = _eval(e.denominator, joint, params)
        return _divide(num, den, pretty_print(e.denominator))
    raise TypeError(f"not an expression: {e!r}")


def _eval_conditional(c: Conditional, joint: DiscreteJoint, params) -> Factor:
    fixed = {k: _resolve(v, params) for k, v in c.fixed}
    fixed.update({m: 0 for m in c.indicators})
    given = c.given + c.indicators
    marg = joint.marginal(set(c.targets) | set(given))
    den = marg.sum_out(c.targets).fix({k: v for k, v in fixed.items() if k in given})
    num = marg.fix(fixed)
    return _divide(num, den, pretty_print(c))


def _eval_sum_product(e: SumOver, joint: DiscreteJoint, params) -> Factor:
    # contract with einsum rather than materialising the full product
    factors = [_eval(f, joint, params) for f in e.body.factors]
    letters = {}
    pool = iter(string.ascii_letters)
    for f in factors:
        for v in f.vars:
            if v not in letters:
                letters[v] = next(pool)
    out_vars = tuple(v for v in letters if v not in e.vars)
    spec = ",".join("".join(letters[v] for v in f.vars) for f in factors)
    spec += "->" + "".join(letters[v] for v in out_vars)
    table = np.einsum(spec, *[np.asarray(f.table, dtype=float) for f in factors], optimize=True)
    return Factor(out_vars, table, joint.domains)


def truncated_factorization(joint: DiscreteJoint, g: MDag, do: Mapping[str, Any]) -> Factor:
    """Interventional distribution over the non-intervened variables.

    Each non-intervened node contributes P(v | pa(v)) with intervened parents
    pinned to their assigned values; intervened factors are deleted.
    """
    g.check(do)
    missing = set(g.nodes) - set(joint.variables)
    if missing:
        raise UnboundVariable(f"graph nodes absent from the joint: {sorted(missing)}")
    factors = []
    for v in g.nodes:
        if v in do:
            continue
        pa = g.sorted(g.parents(v))
        cpt = joint.conditional([v], pa)
        factors.append(cpt.fix({p: do[p] for p in pa if p in do}))
    out = _multiply(factors, joint.domains)
    rest = tuple(v for v in joint.variables if v not in do and v in g)
    extra = [v for v in out.vars if v not in rest]
    out = out.sum_out(extra)
    return out.transpose(rest) if set(out.vars) == set(rest) else out


# -- rendering ----------------------------------------------------------------


def _fmt_value(v: Value) -> str:
    return v if isinstance(v, str) else repr(v)


def _var_text(name: str, c: Conditional, latex: bool) -> str:
    s = _latex_name(name) if latex else name
    if name in c.po:
        s += "^{M=0}"
    fixed = c.fixed_map
    if name in fixed:
        s += f" = {_fmt_value(fixed[name])}"
    return s


def _latex_name(name: str) -> str:
    parts = name.split("_")
    out = parts[-1]
    for p in reversed(parts[:-1]):
        out = f"{p}_{{{out}}}"
    return out


def pretty_print(e: Expression, fmt: str = "text") -> str:
    """Render ``e`` in conventional probability notation (``fmt`` is ``text`` or ``latex``)."""
    latex = fmt == "latex"
    if fmt not in ("text", "latex"):
        raise ValueError(f"unknown format {fmt!r}")
    return _render(e, latex, top=True)


def _render(e: Expression, latex: bool, top: bool = False) -> str:
    if isinstance(e, Conditional):
        targets = ", ".join(_var_text(t, e, latex) for t in e.targets)
        given = [_var_text(g, e, latex) for g in e.given]
        given += [f"{_latex_name(m) if latex else m} = 0" for m in e.indicators]
        bar = r" \mid " if latex else " | "
        return f"P({targets}{bar + ', '.join(given) if given else ''})"
    if isinstance(e, Product):
        return " ".join(_render(f, latex) for f in e.factors)
    if isinstance(e, SumOver):
        names = ", ".join(_latex_name(v) for v in e.vars) if latex else ",".join(e.vars)
        head = rf"\sum_{{{names}}}" if latex else f"Σ_{{{names}}}"
        s = f"{head} {_render(e.body, latex)}"
        return s if top else f"[{s}]"
    if isinstance(e, Quotient):
        if latex:
            return rf"\frac{{{_render(e.numerator, latex, True)}}}{{{_render(e.denominator, latex, True)}}}"
        return f"({_render(e.numerator, latex, True)}) / ({_render(e.denominator, latex, True)})"
    raise TypeError(f"not an expression: {e!r}")


# -- parsing (inverse of the text rendering) ------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<sum>Σ_\{(?P<sumvars>[^}]*)\})|(?P<po>\^\{M=0\})|(?P<name>[A-Za-z_][A-Za-z0-9_@.]*)"
    r"|(?P<num>-?\d+(?:\.\d*)?(?:[eE][-+]?\d+)?)|(?P<op>[()\[\]|,=/]))"
)


def _tokenize(text: str) -> List[Tuple[str, str, int]]:
    pos, out = 0, []
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ExpressionSyntaxError(f"unexpected character at column {pos + 1}: {text[pos:pos + 10]!r}")
        kind = m.lastgroup if m.lastgroup != "sumvars" else "sum"
        if m.group("sum") is not None:
            out.append(("sum", m.group("sumvars"), m.start()))
        else:
            kind = next(k for k in ("po", "name", "num", "op") if m.group(k) is not None)
            out.append((kind, m.group(kind), m.start()))
        pos = m.end()
    return out


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else (None, None, len(self.text))

    def take(self, kind=None, value=None):
        tok = self.peek()
        if tok[0] is None or (kind and tok[0] != kind) or (value and tok[1] != value):
            raise ExpressionSyntaxError(f"expected {value or kind} at column {tok[2] + 1}, got {tok[1]!r}")
        self.i += 1
        return tok

    def parse(self) -> Expression:
        e = self.expr()
        if self.peek()[0] is not None:
            raise ExpressionSyntaxError(f"trailing input at column {self.peek()[2] + 1}")
        return e

    def expr(self) -> Expression:
        if self.peek()[0] == "sum":
            _, names, _ = self.take("sum")
            body = self.expr()
            return SumOver(tuple(n.strip() for n in names.split(",") if n.strip()), body)
        terms = []
        while True:
            kind, val, _ = self.peek()
            if kind == "name" and val == "P" or (kind == "op" and val in "[("):
                terms.append(self.term())
            else:
                break
        if not terms:
            raise ExpressionSyntaxError(f"expected a term at column {self.peek()[2] + 1}")
        return product(terms)

    def term(self) -> Expression:
        kind, val, _ = self.peek()
        if val == "[":
            self.take("op", "[")
            e = self.expr()
            self.take("op", "]")
            return e
        if val == "(":
            self.take("op", "(")
            num = self.expr()
            self.take("op", ")")
            self.take("op", "/")
            self.take("op", "(")
            den = self.expr()
            self.take("op", ")")
            return Quotient(num, den)
        return self.prob()

    def prob(self) -> Conditional:
        self.take("name", "P")
        self.take("op", "(")
        targets = self.varlist()
        given: List[Tuple[str, bool, Any]] = []
        if self.peek()[1] == "|":
            self.take("op", "|")
            given = self.varlist()
        self.take("op", ")")
        po = {n for n, flag, _ in targets + given if flag}
        fixed = {n: v for n, _, v in targets + given if v is not None}
        indicators = tuple(n for n, flag, v in given if n.startswith("M_") and v == 0 and not flag)
        plain_given = tuple(n for n, _, _ in given if n not in indicators)
        for m in indicators:
            fixed.pop(m)
        return Conditional(tuple(n for n, _, _ in targets), plain_given, fixed, po, indicators)

    def varlist(self):
        out = [self.var()]
        while self.peek()[1] == ",":
            self.take("op", ",")
            out.append(self.var())
        return out

    def var(self):
        _, name, _ = self.take("name")
        flag = False
        if self.peek()[0] == "po":
            self.take("po")
            flag = True
        value = None
        if self.peek()[1] == "=":
            self.take("op", "=")
            kind, tok, col = self.peek()
            if kind == "num":
                self.take("num")
                value = float(tok) if any(ch in tok for ch in ".eE") else int(tok)
            elif kind == "name":
                self.take("name")
                value = tok
            else:
                raise ExpressionSyntaxError(f"expected a value at column {col + 1}")
        return name, flag, value


def parse(text: str) -> Expression:
    """Parse the text notation produced by :func:`pretty_print`."""
    return _Parser(text).parse()


# -- JSON ---------------------------------------------------------------------


def expression_to_dict(e: Expression) -> dict:
    if isinstance(e, Conditional):
        d: dict = {"kind": "conditional", "targets": list(e.targets), "given": list(e.given)}
        if e.fixed:
            d["fixed"] = dict(e.fixed)
        if e.po:
            d["po"] = sorted(e.po)
        if e.indicators:
            d["indicators"] = list(e.indicators)
        return d
    if isinstance(e, Product):
        return {"kind": "product", "factors": [expression_to_dict(f) for f in e.factors]}
    if isinstance(e, SumOver):
        return {"kind": "sum", "vars": list(e.vars), "body": expression_to_dict(e.body)}
    if isinstance(e, Quotient):
        return {"kind": "quotient", "numerator": expression_to_dict(e.numerator), "denominator": expression_to_dict(e.denominator)}
    raise TypeError(f"not an expression: {e!r}")


def expression_from_dict(d: Mapping) -> Expression:
    kind = d.get("kind")
    if kind == "conditional":
        return Conditional(
            tuple(d["targets"]), tuple(d.get("given", ())), d.get("fixed", {}), frozenset(d.get("po", ())), tuple(d.get("indicators", ()))
        )
    if kind == "product":
        return Product(tuple(expression_from_dict(f) for f in d["factors"]))
    if kind == "sum":
        return SumOver(tuple(d["vars"]), expression_from_dict(d["body"]))
    if kind == "quotient":
        return Quotient(expression_from_dict(d["numerator"]), expression_from_dict(d["denominator"]))
    raise ExpressionSyntaxError(f"unknown expression kind {kind!r}")
