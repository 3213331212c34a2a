"""Structural causal model simulation with a missingness layer.

A :class:`ScmSpec` lists nodes in topological order. Each node has a
distribution family and parameter formulas over its parents written in a
small arithmetic grammar (``+ - * / **``, ``exp``, ``sqrt``, ``log``,
``I(cond)`` and comparisons). Sampling is vectorised per column; every column
draws from its own substream keyed by (seed, replication, node) so that
observational and interventional samples share randomness.
"""

from __future__ import annotations

import ast
import csv
import json
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .graph import MDag, UnknownNode

__all__ = [
    "FormulaError",
    "FormulaDomainError",
    "Formula",
    "compile_formula",
    "TruncatedNormalRedraw",
    "NodeSpec",
    "ScmSpec",
    "Dataset",
    "sample",
    "sample_interventional",
    "apply_missingness",
    "interventional_mean",
    "cohort_spec",
    "spec_to_dict",
    "spec_from_dict",
    "load_spec",
    "SCENARIOS",
    "FAMILIES",
]

FAMILIES = ("bernoulli", "multinomial", "normal", "truncnorm", "poisson", "deterministic")

# partially observed families masked per scenario
SCENARIOS: Dict[str, Tuple[str, ...]] = {
    "sim1": ("VL", "MEMS"),
    "sim2": ("VL", "Weight", "MEMS", "EFV"),
}


class FormulaError(ValueError):
    pass


class FormulaDomainError(ArithmeticError):
    pass


# -- formula grammar ------------------------------------------------------------

_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply, ast.Div: None, ast.Pow: np.power}
_CMPS = {ast.Lt: np.less, ast.LtE: np.less_equal, ast.Gt: np.greater, ast.GtE: np.greater_equal, ast.Eq: np.equal, ast.NotEq: np.not_equal}


def _sqrt(x):
    if np.any(np.asarray(x) < 0):
        raise FormulaDomainError("sqrt of a negative value")
    return np.sqrt(x)


def _log(x):
    if np.any(np.asarray(x) <= 0):
        raise FormulaDomainError("log of a non-positive value")
    return np.log(x)


_FUNCS: Dict[str, Callable] = {
    "exp": np.exp,
    "sqrt": _sqrt,
    "log": _log,
    "I": lambda x: np.asarray(x, dtype=float),
}


@dataclass(frozen=True)
class Formula:
    text: str
    names: Tuple[str, ...]
    _fn: Callable = field(repr=False, compare=False)

    def __call__(self, env: Mapping[str, Any]) -> np.ndarray:
        with np.errstate(over="ignore"):
            return self._fn(env)


def compile_formula(text: str) -> Formula:
    """Parse ``text`` with the restricted grammar into a vectorised callable."""
    try:
        tree = ast.parse(str(text).strip(), mode="eval")
    except SyntaxError as exc:
        raise FormulaError(f"cannot parse formula {text!r}: {exc.msg}") from None
    names: List[str] = []

    def build(node) -> Callable:
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
            v = float(node.value)
            return lambda env: v
        if isinstance(node, ast.Name):
            if node.id in _FUNCS:
                raise FormulaError(f"function {node.id} used as a value in {text!r}")
            if node.id not in names:
                names.append(node.id)
            key = node.id
            return lambda env: env[key]
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            inner = build(node.operand)
            return (lambda env: -inner(env)) if isinstance(node.op, ast.USub) else inner
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            lhs, rhs = build(node.left), build(node.right)
            if isinstance(node.op, ast.Div):
                def div(env):
                    den = rhs(env)
                    if np.any(np.asarray(den) == 0):
                        raise FormulaDomainError(f"division by zero in {text!r}")
                    return np.divide(lhs(env), den)
                return div
            op = _BINOPS[type(node.op)]
            return lambda env: op(lhs(env), rhs(env))
        if isinstance(node, ast.Compare):
            parts = [build(node.left)] + [build(c) for c in node.comparators]
            ops = [_CMPS.get(type(o)) for o in node.ops]
            if None in ops:
                raise FormulaError(f"unsupported comparison in {text!r}")

            def cmp(env):
                vals = [p(env) for p in parts]
                out = True
                for op, a, b in zip(ops, vals, vals[1:]):
                    out = np.logical_and(out, op(a, b))
                return np.asarray(out, dtype=float)
            return cmp
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS:
            if len(node.args) != 1 or node.keywords:
                raise FormulaError(f"{node.func.id} takes exactly one argument in {text!r}")
            fn, arg = _FUNCS[node.func.id], build(node.args[0])
            return lambda env: fn(arg(env))
        raise FormulaError(f"unsupported syntax {ast.dump(node)[:40]} in {text!r}")

    fn = build(tree.body)
    return Formula(str(text), tuple(names), fn)


# -- distribution helpers ------------------------------------------------------------


@dataclass(frozen=True)
class TruncatedNormalRedraw:
    """Normal draws with out-of-range values replaced by uniform redraws.

    Values below ``a`` become U(a1, a2); values above ``b`` become U(b1, b2).
    """

    mu: Any
    sigma: float
    a: float
    a1: float
    a2: float
    b: float
    b1: float
    b2: float

    def __post_init__(self):
        if not (self.a <= self.a1 <= self.a2 and self.b1 <= self.b2 <= self.b):
            raise ValueError("bounds must satisfy a <= a1 <= a2 and b1 <= b2 <= b")

    @property
    def support(self) -> Tuple[float, float]:
        return min(self.a, self.a1), max(self.b, self.b2)

    def transform(self, z: np.ndarray, u: np.ndarray) -> np.ndarray:
        x = self.mu + self.sigma * z
        low, high = x < self.a, x > self.b
        x = np.where(low, self.a1 + (self.a2 - self.a1) * u, x)
        return np.where(high, self.b1 + (self.b2 - self.b1) * u, x)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.transform(rng.standard_normal(size), rng.random(size))

    def tail_probabilities(self) -> Tuple[np.ndarray, np.ndarray]:
        from scipy.stats import norm

        return norm.cdf(self.a, self.mu, self.sigma), norm.sf(self.b, self.mu, self.sigma)


@dataclass(frozen=True)
class NodeSpec:
    name: str
    family: str
    params: Mapping[str, Any]
    parents: Tuple[str, ...] = ()
    categories: Optional[Tuple[float, ...]] = None
    time: Optional[int] = None
    # "c" for substantive variables, "m" for the missingness layer
    layer: str = "c"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise FormulaError(f"{self.name}: unknown family {self.family!r}")
        object.__setattr__(self, "parents", tuple(self.parents))
        if self.categories is not None:
            object.__setattr__(self, "categories", tuple(self.categories))

    def formulas(self) -> Dict[str, Formula]:
        p = self.params
        keys = {
            "bernoulli": ["p"],
            "normal": ["mu", "sigma"],
            "truncnorm": ["mu", "sigma"],
            "poisson": ["lam"],
            "deterministic": ["value"],
            "multinomial": [],
        }[self.family]
        out = {}
        for k in keys:
            if k not in p:
                raise FormulaError(f"{self.name}: {self.family} needs parameter {k!r}")
            out[k] = compile_formula(p[k])
        if self.family == "multinomial":
            probs = p.get("probs")
            if not probs:
                raise FormulaError(f"{self.name}: multinomial needs a 'probs' list")
            for i, f in enumerate(probs):
                out[f"p{i + 1}"] = compile_formula(f)
        if self.family == "truncnorm" and len(p.get("bounds", ())) != 6:
            raise FormulaError(f"{self.name}: truncnorm needs six bounds [a, a1, a2, b, b1, b2]")
        return out


class ScmSpec:
    def __init__(self, name: str, nodes: Sequence[NodeSpec], constants: Optional[Mapping[str, float]] = None):
        self.name = name
        self.nodes = tuple(nodes)
        self.constants = dict(constants or {})
        self._by_name = {n.name: n for n in self.nodes}
        if len(self._by_name) != len(self.nodes):
            raise FormulaError("duplicate node names in SCM spec")
        self._compiled: Dict[str, Dict[str, Formula]] = {}
        seen = set(self.constants)
        for node in self.nodes:
            forms = node.formulas()
            refs = {r for f in forms.values() for r in f.names}
            unknown = refs - set(node.parents) - set(self.constants)
            if unknown:
                raise FormulaError(f"{node.name}: formula references non-parents {sorted(unknown)}")
            late = set(node.parents) - seen
            if late:
                raise FormulaError(f"{node.name}: parents {sorted(late)} are not defined earlier")
            self._compiled[node.name] = forms
            seen.add(node.name)

    def __getitem__(self, name: str) -> NodeSpec:
        return self._by_name[name]

    def __contains__(self, name: object) -> bool:
        return name in self._by_name

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(n.name for n in self.nodes)

    def validate_against(self, g: MDag) -> None:
        """Formula parents must be graph parents (spec-only deterministic nodes excepted)."""
        for node in self.nodes:
            if node.name not in g:
                continue
            extra = {
                p for p in node.parents if p in g and p not in g.parents(node.name)
            }
            if extra:
                raise FormulaError(f"{node.name}: parents {sorted(extra)} are not graph parents")
            foreign = [p for p in node.parents if p not in g and self[p].family != "deterministic"]
            if foreign:
                raise FormulaError(f"{node.name}: parents {foreign} are missing from the graph")


# -- datasets -------------------------------------------------------------------------


@dataclass
class Dataset:
    columns: Dict[str, np.ndarray]
    missing: Dict[str, np.ndarray] = field(default_factory=dict)
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(next(iter(self.columns.values()))) if self.columns else 0

    def observed(self, name: str) -> np.ndarray:
        m = self.missing.get(name)
        return np.ones(self.n, dtype=bool) if m is None else ~m

    def rows_observed(self, names: Iterable[str]) -> np.ndarray:
        out = np.ones(self.n, dtype=bool)
        for name in names:
            out &= self.observed(name)
        return out

    def values(self, name: str) -> np.ndarray:
        """Column with NaN in missing cells."""
        col = np.asarray(self.columns[name], dtype=float)
        m = self.missing.get(name)
        if m is None or not m.any():
            return col
        col = col.copy()
        col[m] = np.nan
        return col

    def copy(self) -> "Dataset":
        return Dataset({k: v.copy() for k, v in self.columns.items()}, {k: v.copy() for k, v in self.missing.items()}, dict(self.meta))

    def missing_rate(self, name: str) -> float:
        m = self.missing.get(name)
        return 0.0 if m is None else float(m.mean())

    def check(self, g: Optional[MDag] = None) -> None:
        """Missing flags only on partially observed columns, matching indicators."""
        for name, m in self.missing.items():
            ind = f"M_{name}"
            if ind in self.columns and not np.array_equal(self.columns[ind] == 1, m):
                raise ValueError(f"missing flags of {name} disagree with {ind}")
            if g is not None and name in g and g.indicator(name) is None:
                raise ValueError(f"{name} is not partially observed but has missing flags")

    def to_csv(self, path, columns: Optional[Sequence[str]] = None) -> None:
        cols = list(columns or self.columns)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            data = [self.values(c) for c in cols]
            for i in range(self.n):
                w.writerow(["NA" if math.isnan(col[i]) else _fmt_num(col[i]) for col in data])

    @classmethod
    def from_csv(cls, path, meta_path=None) -> "Dataset":
        """Read a CSV written by :meth:`to_csv`; ``NA`` cells become missing."""
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
        if not rows:
            raise ValueError(f"{path}: empty file")
        header, body = rows[0], rows[1:]
        cols: Dict[str, np.ndarray] = {}
        missing: Dict[str, np.ndarray] = {}
        for j, name in enumerate(header):
            raw = [r[j] for r in body]
            na = np.array([x in ("NA", "") for x in raw], dtype=bool)
            try:
                vals = np.array([np.nan if m else float(x) for x, m in zip(raw, na)])
            except ValueError as exc:
                raise ValueError(f"{path}: column {name}: {exc}") from None
            cols[name] = vals
            if na.any():
                missing[name] = na
        meta = {}
        if meta_path is not None and Path(meta_path).exists():
            meta = json.loads(Path(meta_path).read_text(encoding="utf-8"))
        return cls(cols, missing, meta)

    def write_metadata(self, path) -> None:
        Path(path).write_text(json.dumps(self.meta, indent=1, sort_keys=True, default=str) + "\n", encoding="utf-8")


def _fmt_num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


# -- sampling -------------------------------------------------------------------------


def _stream(seed: int, replication: int, name: str) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(replication), zlib.crc32(name.encode())))
    return np.random.Generator(np.random.PCG64(ss))


def _draw(node: NodeSpec, forms: Dict[str, Formula], env: Dict[str, Any], n: int, rng, clamps: Dict[str, int]) -> np.ndarray:
    fam = node.family
    full = lambda v: np.broadcast_to(np.asarray(v, dtype=float), (n,))  # noqa: E731
    if fam == "deterministic":
        return np.array(full(forms["value"](env)))
    if fam == "bernoulli":
        p = full(forms["p"](env))
        bad = (p < 0) | (p > 1) | np.isnan(p)
        if bad.any():
            clamps[node.name] = clamps.get(node.name, 0) + int(bad.sum())
            p = np.clip(np.nan_to_num(p, nan=0.0), 0.0, 1.0)
        return (rng.random(n) < p).astype(float)
    if fam == "multinomial":
        k = len(node.params["probs"])
        probs = np.stack([full(forms[f"p{i + 1}"](env)) for i in range(k)], axis=1)
        probs = np.clip(probs, 0.0, None)
        total = probs.sum(axis=1, keepdims=True)
        if np.any(total <= 0):
            raise FormulaDomainError(f"{node.name}: all category probabilities are zero")
        probs = probs / total
        cats = np.asarray(node.categories or tuple(range(1, k + 1)), dtype=float)
        u = rng.random(n)
        idx = (u[:, None] > np.cumsum(probs, axis=1)).sum(axis=1)
        return cats[np.minimum(idx, k - 1)]
    if fam == "normal":
        return full(forms["mu"](env)) + full(forms["sigma"](env)) * rng.standard_normal(n)
    if fam == "truncnorm":
        a, a1, a2, b, b1, b2 = (float(x) for x in node.params["bounds"])
        tn = TruncatedNormalRedraw(full(forms["mu"](env)), full(forms["sigma"](env)), a, a1, a2, b, b1, b2)
        return tn.sample(rng, n)
    if fam == "poisson":
        return rng.poisson(full(forms["lam"](env))).astype(float)
    raise FormulaError(f"unknown family {fam}")


def _run(spec: ScmSpec, n: int, seed: int, replication: int, do: Mapping[str, float], layers: Sequence[str]) -> Dataset:
    env: Dict[str, Any] = dict(spec.constants)
    cols: Dict[str, np.ndarray] = {}
    clamps: Dict[str, int] = {}
    for node in spec.nodes:
        if node.layer not in layers and node.name not in do:
            continue
        if node.name in do:
            col = np.full(n, float(do[node.name]))
        else:
            missing = [p for p in node.parents if p not in env]
            if missing:
                raise FormulaError(f"{node.name}: parents {missing} were not sampled")
            col = _draw(node, spec._compiled[node.name], env, n, _stream(seed, replication, node.name), clamps)
        env[node.name] = col
        cols[node.name] = col
    meta = {
        "spec": spec.name, "seed": int(seed), "replication": int(replication), "n": int(n), "clamped": clamps,
        "layers": {k: spec[k].layer for k in cols},
        "categories": {k: list(spec[k].categories or range(1, len(spec[k].params["probs"]) + 1)) for k in cols if spec[k].family == "multinomial"},
    }
    if do:
        meta["intervention"] = {k: float(v) for k, v in do.items()}
    return Dataset(cols, {}, meta)


def sample(spec: ScmSpec, n: int, seed: int, replication: int = 0) -> Dataset:
    """Draw ``n`` i.i.d. rows from all layers (no cells masked yet)."""
    return _run(spec, n, seed, replication, {}, ("c", "m"))


def sample_interventional(spec: ScmSpec, do: Mapping[str, float] | Sequence[Tuple[str, float]], n: int, seed: int, replication: int = 0) -> Dataset:
    """Sample with the structural equations of ``do`` nodes replaced by constants.

    The missingness layer is skipped, so the result has no missing cells.
    """
    do = dict(do)
    unknown = [k for k in do if k not in spec]
    if unknown:
        raise UnknownNode(unknown)
    return _run(spec, n, seed, replication, do, ("c",))


def interventional_mean(spec: ScmSpec, do: Mapping[str, float], outcome: str, n: int, seed: int, replication: int = 0) -> float:
    """E[outcome] under ``do``, averaging the outcome's structural mean over sampled parents.

    Using the conditional mean instead of the sampled outcome removes the
    outcome's own sampling noise, which matters when tracing a truth curve.
    """
    node = spec[outcome]
    d = sample_interventional(spec, do, n, seed, replication)
    if outcome in do:
        return float(do[outcome])
    env = {**spec.constants, **d.columns}
    forms = spec._compiled[outcome]
    key = {"bernoulli": "p", "normal": "mu", "poisson": "lam", "deterministic": "value"}.get(node.family)
    if key is None:
        return float(d.columns[outcome].mean())
    val = np.broadcast_to(np.asarray(forms[key](env), dtype=float), (n,))
    if node.family == "bernoulli":
        val = np.clip(val, 0.0, 1.0)
    return float(val.mean())


def apply_missingness(d: Dataset, scenario: str) -> Dataset:
    """Mask the scenario's variable families using the sampled indicators.

    Indicators of families the scenario ignores are reset to 0, so indicator
    columns always agree with the missing flags.
    """
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; expected one of {sorted(SCENARIOS)}")
    masked = SCENARIOS[scenario]
    out = d.copy()
    out.missing = {}
    for name in list(out.columns):
        if not name.startswith("M_"):
            continue
        target = name[2:]
        if target not in out.columns:
            continue
        family = target.rsplit("_", 1)[0]
        if family in masked:
            out.missing[target] = out.columns[name] == 1
        else:
            out.columns[name] = np.zeros(out.n)
    out.meta = {**d.meta, "scenario": scenario}
    return out


# -- the cohort data-generating process ---------------------------------------------------

_WEEKS = (0, 6, 36, 48, 60, 84)


def _logit(expr: str) -> str:
    return f"1/(1+exp(-({expr})))"


def cohort_spec(variant: str = "main") -> ScmSpec:
    """The simulation DGP for the main m-DAG and its two alternatives.

    EFV_0 and MEMS_0 are deterministic zeros so that the baseline viral load
    and first adherence formulas are well defined.
    """
    if variant not in ("main", "alt1", "alt2"):
        raise ValueError(f"unknown variant {variant!r}")
    N: List[NodeSpec] = []

    def add(name, family, params, parents=(), categories=None, time=None, layer="c"):
        N.append(NodeSpec(name, family, params, tuple(parents), categories, time, layer))

    add("Sex", "bernoulli", {"p": "0.5"})
    geno = [
        "-0.103 + I(Sex == 1)*0.223 + I(Sex == 0)*0.173",
        "-0.086 + I(Sex == 1)*0.198 + I(Sex == 0)*0.214",
        "-0.309 + I(Sex == 1)*0.082 + I(Sex == 0)*0.170",
    ]
    add("Genotype", "multinomial", {"probs": [_logit(g) for g in geno]}, ["Sex"], (1, 2, 3))
    add("Age", "truncnorm", {"mu": "1.501", "sigma": "0.369", "bounds": [0.693, 0.693, 1, 2.8, 2.7, 2.8]})
    add(
        "Weight_0",
        "truncnorm",
        {"mu": "(1.5 + 0.2*Sex + 0.774*Age)*0.94", "sigma": "0.369", "bounds": [2.26, 2.26, 2.67, 3.37, 3.02, 3.37]},
        ["Sex", "Age"],
        time=0,
    )
    nrti = [
        "-0.006 + I(Age > 1.4563)*Age*0.1735 + I(Age <= 1.4563)*Age*0.1570",
        "-0.006 + I(Age > 1.4563)*Age*0.1735 + I(Age <= 1.4563)*Age*0.1570",
        "-0.006 + I(Age > 1.4563)*Age*0.1570 + I(Age <= 1.4563)*Age*0.1818",
    ]
    add("NRTI", "multinomial", {"probs": [_logit(x) for x in nrti]}, ["Age"], (1, 2, 3))
    add("CoMo_0", "bernoulli", {"p": "0.15"}, time=0)
    add("EFV_0", "deterministic", {"value": "0"}, time=0)
    add("MEMS_0", "deterministic", {"value": "0"}, time=0)
    add("VL_0", "bernoulli", {"p": "1 - " + _logit("0.4 + 1.9*sqrt(EFV_0)")}, ["EFV_0"], time=0)
    ses_layer = "c" if variant == "alt2" else "m"
    add("SES_0", "poisson", {"lam": "3"}, time=0, layer=ses_layer)

    for k, t in enumerate(_WEEKS):
        p = _WEEKS[k - 1] if k else None
        if k >= 1:
            mems = f"0.71 + CoMo_{p}*0.31" + (f" + MEMS_{p}*0.31" if k >= 2 else "")
            mems_par = [f"CoMo_{p}"] + ([f"MEMS_{p}"] if k >= 2 else [])
            if variant == "alt2":
                mems += " - SES_0*0.5"
                mems_par.append("SES_0")
            add(f"MEMS_{t}", "bernoulli", {"p": _logit(mems)}, mems_par, time=t)
            add(
                f"Weight_{t}",
                "truncnorm",
                {"mu": f"Weight_{p}*1.04 - 0.05*I(CoMo_{p} == 1)", "sigma": "0.4", "bounds": [2.26, 2.26, 2.473, 3.37, 3.2, 3.37]},
                [f"Weight_{p}", f"CoMo_{p}"],
                time=t,
            )
            add(
                f"CoMo_{t}",
                "bernoulli",
                {"p": "1 - " + _logit(f"0.5*I(CoMo_{p} == 1) + Age*0.1 + Weight_{p}*0.1")},
                [f"CoMo_{p}", "Age", f"Weight_{p}"],
                time=t,
            )
            if k == 1:
                dose = [
                    f"5 + sqrt(Weight_{t})*8 - Age*10",
                    f"4 + sqrt(Weight_{t})*8.768 - Age*9.06",
                    f"3 + sqrt(Weight_{t})*6.562 - Age*8.325",
                ]
                dose_par = [f"Weight_{t}", "Age"]
            else:
                dose = [
                    f"4 + Dose_{p}*0.5 + sqrt(Weight_{t})*4 - Age*10",
                    f"-8 + Dose_{p}*0.5 + sqrt(Weight_{t})*8.568 - Age*9.06",
                    f"20 + Dose_{p}*0.5 + sqrt(Weight_{t})*6.562 - Age*18.325",
                ]
                dose_par = [f"Dose_{p}", f"Weight_{t}", "Age"]
            probs = [_logit(x) for x in dose]
            probs.append("1 - (" + " + ".join(probs) + ")")
            add(f"Dose_{t}", "multinomial", {"probs": probs}, dose_par, (1, 2, 3, 4), time=t)
            add(
                f"EFV_{t}",
                "truncnorm",
                {
                    "mu": f"0.1*Dose_{t} + 0.1*MEMS_{t} + I(Genotype <= 2)*2.66 + I(Genotype == 3)*4.6",
                    "sigma": "4.06",
                    "bounds": [0.2032, 0.2032, 0.88, 21.84, 8.37, 21.84],
                },
                [f"Dose_{t}", f"MEMS_{t}", "Genotype"],
                time=t,
            )
            icpt = 1 - 0.6 * (k == 1) - 1.2 * (k == 4)
            slope = 2 - 0.2 * (k == 3)
            add(
                f"VL_{t}",
                "bernoulli",
                {"p": "1 - " + _logit(f"{icpt:g} + 0.1*CoMo_{p} + {slope:g}*sqrt(EFV_{t})")},
                [f"CoMo_{p}", f"EFV_{t}"],
                time=t,
            )
        # missingness layer
        mv = "-2.95 + 0.1*SES_0" + (f" + MV_{p}" if k >= 1 else "")
        mv_par = ["SES_0"] + ([f"MV_{p}"] if k >= 1 else [])
        if variant == "alt1":
            mv += f" + 2*VL_{t}"
            mv_par.append(f"VL_{t}")
        add(f"MV_{t}", "bernoulli", {"p": _logit(mv)}, mv_par, time=t, layer="m")
        add(f"TI_{t}", "bernoulli", {"p": "0.05"}, time=t, layer="m")
        both = f"I(MV_{t} == 1) + I(MV_{t} == 0)*I(TI_{t} == 1)*0.5"
        if k >= 1:
            add(f"M_EFV_{t}", "bernoulli", {"p": both}, [f"MV_{t}", f"TI_{t}"], time=t, layer="m")
        add(f"M_Weight_{t}", "bernoulli", {"p": f"I(MV_{t} == 1)"}, [f"MV_{t}"], time=t, layer="m")
        add(f"M_VL_{t}", "bernoulli", {"p": both}, [f"MV_{t}", f"TI_{t}"], time=t, layer="m")
        if k >= 1:
            add(f"M_MEMS_{t}", "bernoulli", {"p": _logit(f"0.5*I(TI_{t} == 1) + 0.2")}, [f"TI_{t}"], time=t, layer="m")
    return ScmSpec(f"cohort_{variant}", N)


# -- serialization -------------------------------------------------------------------------


def spec_to_dict(spec: ScmSpec) -> dict:
    nodes = []
    for n in spec.nodes:
        d: dict = {"name": n.name, "family": n.family, "params": dict(n.params), "parents": list(n.parents)}
        if n.categories is not None:
            d["categories"] = list(n.categories)
        if n.time is not None:
            d["time"] = n.time
        if n.layer != "c":
            d["layer"] = n.layer
        nodes.append(d)
    return {"name": spec.name, "constants": spec.constants, "nodes": nodes}


def spec_from_dict(d: Mapping) -> ScmSpec:
    nodes = [
        NodeSpec(
            x["name"], x["family"], x["params"], tuple(x.get("parents", ())),
            tuple(x["categories"]) if "categories" in x else None, x.get("time"), x.get("layer", "c"),
        )
        for x in d["nodes"]
    ]
    return ScmSpec(d.get("name", "scm"), nodes, d.get("constants", {}))


def load_spec(path) -> ScmSpec:
    with open(path, encoding="utf-8") as fh:
        return spec_from_dict(json.load(fh))
