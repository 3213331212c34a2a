"""Estimation of concentration-response curves from incomplete data.

Contents: GLM fitting (logistic IRLS, least squares, multinomial Newton),
plug-in g-computation driven by an identified factorization, available-case
and complete-data pipelines, chained-equations multiple imputation, pooling,
Monte-Carlo intervals and a seeded replication harness.
"""

from __future__ import annotations

import logging
import warnings
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .estimand import Conditional, Expression
from .graph import MDag
from .scm import Dataset, ScmSpec, apply_missingness, interventional_mean, sample

log = logging.getLogger(__name__)

__all__ = [
    "GRID",
    "Separation",
    "RankDeficient",
    "InsufficientRows",
    "GridMismatch",
    "PositivityWarning",
    "NonConvergence",
    "RegressionModel",
    "fit",
    "Design",
    "FactorModel",
    "GFormulaPlan",
    "CcrcEstimate",
    "gcompute",
    "impute_mi",
    "pool",
    "McInterval",
    "mc_interval",
    "truth_curve",
    "SimulationConfig",
    "SimulationResult",
    "run_replication",
    "run_simulation",
]

GRID = np.round(np.arange(0.0, 10.0 + 1e-9, 0.5), 10)
MIN_ROWS = 30
DEFAULT_TRANSFORMS: Dict[str, Callable] = {"EFV": np.sqrt}
# imputation bounds per variable family
DEFAULT_BOUNDS: Dict[str, Tuple[float, float]] = {"EFV": (0.0, 35.0)}


class RankDeficient(np.linalg.LinAlgError):
    pass


class InsufficientRows(ValueError):
    pass


class GridMismatch(ValueError):
    pass


class Separation(UserWarning):
    pass


class PositivityWarning(UserWarning):
    pass


class NonConvergence(UserWarning):
    pass


def _family_of(name: str) -> str:
    return name.rsplit("_", 1)[0] if "_" in name else name


def _expit(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# -- regression ------------------------------------------------------------------------


@dataclass
class RegressionModel:
    family: str
    coef: np.ndarray
    names: Tuple[str, ...] = ()
    cov: Optional[np.ndarray] = None
    sigma: float = 0.0
    converged: bool = True
    separation: bool = False
    iterations: int = 0
    n: int = 0
    # multinomial only: category labels, first is the reference
    levels: Tuple[float, ...] = ()

    def linear_predictor(self, X: np.ndarray) -> np.ndarray:
        return X @ self.coef

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Mean for linear, P(y=1) for logistic, category probabilities (n, K) for multinomial."""
        eta = X @ self.coef
        if self.family == "logistic":
            return _expit(eta)
        if self.family == "multinomial":
            eta = np.column_stack([np.zeros(len(X)), eta])
            eta -= eta.max(axis=1, keepdims=True)
            p = np.exp(eta)
            return p / p.sum(axis=1, keepdims=True)
        return eta

    def perturbed(self, rng: np.random.Generator) -> "RegressionModel":
        """Parameters drawn from the approximate posterior (normal around the MLE)."""
        coef = self.coef
        sigma = self.sigma
        if self.cov is not None:
            flat = coef.reshape(-1)
            try:
                chol = np.linalg.cholesky(self.cov + 1e-12 * np.eye(len(flat)))
                flat = flat + chol @ rng.standard_normal(len(flat))
            except np.linalg.LinAlgError:
                pass
            coef = flat.reshape(coef.shape)
        if self.family == "linear" and self.n > len(self.coef):
            df = self.n - len(self.coef)
            sigma = self.sigma * np.sqrt(df / rng.chisquare(df))
        return RegressionModel(self.family, coef, self.names, self.cov, sigma, self.converged, self.separation, self.iterations, self.n, self.levels)


def _check_design(X: np.ndarray, y: np.ndarray) -> None:
    n, p = X.shape
    if n < max(MIN_ROWS, p + 1):
        raise InsufficientRows(f"{n} usable rows for {p} coefficients (need at least {max(MIN_ROWS, p + 1)})")
    s = np.linalg.svd(X, compute_uv=False)
    if s[-1] <= s[0] * 1e-10:
        raise RankDeficient(f"design matrix is rank deficient (condition {s[0] / max(s[-1], 1e-300):.3g})")


def _fit_logistic(y, X, tol=1e-8, max_iter=50, weights=None, start=None) -> RegressionModel:
    n, p = X.shape
    w0 = np.ones(n) if weights is None else weights
    beta = np.zeros(p) if start is None else np.array(start, dtype=float)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        eta = np.clip(X @ beta, -35, 35)
        mu = _expit(eta)
        w = np.maximum(mu * (1 - mu), 1e-12) * w0
        H = X.T @ (X * w[:, None])
        g = X.T @ ((y - mu) * w0)
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        beta = beta + step
        if np.max(np.abs(step)) < tol:
            converged = True
            break
        # diverging towards fitted 0/1: further steps only inflate coefficients
        if np.max(np.abs(X @ beta)) > 30:
            break
    eta = X @ beta
    separation = (not converged) or bool(np.max(np.abs(eta)) > 30)
    mu = _expit(np.clip(eta, -35, 35))
    w = np.maximum(mu * (1 - mu), 1e-12) * w0
    try:
        cov = np.linalg.inv(X.T @ (X * w[:, None]))
    except np.linalg.LinAlgError:
        cov = None
    if separation:
        warnings.warn("logistic fit did not converge or separated the data", Separation, stacklevel=3)
    return RegressionModel("logistic", beta, cov=cov, converged=converged, separation=separation, iterations=it, n=n)


def _fit_linear(y, X) -> RegressionModel:
    n, p = X.shape
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    df = max(n - p, 1)
    sigma = float(np.sqrt(resid @ resid / df))
    cov = np.linalg.inv(X.T @ X) * sigma**2
    return RegressionModel("linear", beta, cov=cov, sigma=sigma, n=n)


def _fit_multinomial(y, X, tol=1e-8, max_iter=50) -> RegressionModel:
    levels = tuple(np.unique(y))
    K = len(levels)
    if K < 2:
        raise RankDeficient("multinomial outcome has a single level")
    n, p = X.shape
    Y = (y[:, None] == np.asarray(levels)[None, 1:]).astype(float)
    B = np.zeros((p, K - 1))
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        eta = np.column_stack([np.zeros(n), X @ B])
        eta -= eta.max(axis=1, keepdims=True)
        P = np.exp(eta)
        P /= P.sum(axis=1, keepdims=True)
        P = P[:, 1:]
        g = (X.T @ (Y - P)).reshape(-1, order="F")
        H = np.zeros((p * (K - 1), p * (K - 1)))
        for a in range(K - 1):
            for b in range(K - 1):
                w = P[:, a] * ((a == b) - P[:, b])
                H[a * p:(a + 1) * p, b * p:(b + 1) * p] = X.T @ (X * w[:, None])
        step = np.linalg.solve(H + 1e-10 * np.eye(len(H)), g)
        B += step.reshape((p, K - 1), order="F")
        if np.max(np.abs(step)) < tol:
            converged = True
            break
    cov_flat = np.linalg.inv(H + 1e-10 * np.eye(len(H)))
    if not converged:
        warnings.warn("multinomial fit did not converge", Separation, stacklevel=3)
    m = RegressionModel("multinomial", B, converged=converged, separation=not converged, iterations=it, n=n, levels=levels)
    # covariance is stored for the column-major flattening used by perturbed()
    perm = np.arange(p * (K - 1)).reshape((p, K - 1), order="F").reshape(-1)
    m.cov = cov_flat[np.ix_(perm, perm)]
    return m


def fit(family: str, y, X, names: Sequence[str] = (), tol: float = 1e-8, max_iter: int = 50, start=None, check: bool = True) -> RegressionModel:
    """Maximum-likelihood GLM fit. ``X`` must already contain any intercept column.

    ``start`` warm-starts IRLS; ``check=False`` skips the rank check for
    designs already known to be full rank.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or len(y) != len(X):
        raise ValueError("X must be 2-D with one row per outcome")
    if np.isnan(y).any() or np.isnan(X).any():
        raise ValueError("missing cells among the rows used for fitting")
    if check:
        _check_design(X, y)
    elif len(X) < MIN_ROWS:
        raise InsufficientRows(f"{len(X)} usable rows")
    if family == "logistic":
        m = _fit_logistic(y, X, tol, max_iter, start=start)
    elif family == "linear":
        m = _fit_linear(y, X)
    elif family in ("multinomial", "multinomial-logit"):
        m = _fit_multinomial(y, X, tol, max_iter)
    else:
        raise ValueError(f"unknown family {family!r}")
    m.names = tuple(names)
    return m


# -- design matrices --------------------------------------------------------------------


@dataclass(frozen=True)
class Design:
    """Main-effects design: intercept, dummies for categorical columns, transforms."""

    variables: Tuple[str, ...]
    categories: Mapping[str, Tuple[float, ...]] = field(default_factory=dict)
    transforms: Mapping[str, Callable] = field(default_factory=lambda: dict(DEFAULT_TRANSFORMS))

    @property
    def names(self) -> Tuple[str, ...]:
        out = ["(Intercept)"]
        for v in self.variables:
            cats = self.categories.get(v)
            if cats:
                out += [f"{v}={c:g}" for c in cats[1:]]
            else:
                out.append(v)
        return tuple(out)

    def matrix(self, cols: Mapping[str, np.ndarray], n: Optional[int] = None) -> np.ndarray:
        if n is None:
            n = len(next(iter(cols.values())))
        parts = [np.ones(n)]
        for v in self.variables:
            x = np.asarray(cols[v], dtype=float)
            cats = self.categories.get(v)
            if cats:
                parts += [(x == c).astype(float) for c in cats[1:]]
                continue
            fn = self.transforms.get(_family_of(v))
            parts.append(fn(np.maximum(x, 0)) if fn is not None else x)
        return np.column_stack(parts)

    def linear_predictor(self, cols: Mapping[str, np.ndarray], coef: np.ndarray, n: int) -> np.ndarray:
        """X @ coef without materialising X (coef may be 2-D, one column per category)."""
        coef = np.asarray(coef, dtype=float)
        eta = np.broadcast_to(coef[0], (n,) + coef.shape[1:]).copy()
        j = 1
        for v in self.variables:
            x = np.asarray(cols[v], dtype=float)
            cats = self.categories.get(v)
            if cats:
                for c in cats[1:]:
                    eta += np.multiply.outer(x == c, coef[j]) if coef.ndim > 1 else (x == c) * coef[j]
                    j += 1
                continue
            fn = self.transforms.get(_family_of(v))
            x = fn(np.maximum(x, 0)) if fn is not None else x
            eta += np.multiply.outer(x, coef[j]) if coef.ndim > 1 else x * coef[j]
            j += 1
        return eta


# -- g-formula plans -------------------------------------------------------------------------


@dataclass(frozen=True)
class FactorModel:
    target: str
    predictors: Tuple[str, ...]
    family: str  # logistic | linear | multinomial


@dataclass(frozen=True)
class GFormulaPlan:
    baseline: Tuple[str, ...]
    steps: Tuple[FactorModel, ...]
    treatments: Tuple[str, ...]
    outcome: str
    outcome_value: Optional[float] = 1.0

    @property
    def variables(self) -> Tuple[str, ...]:
        names = list(self.baseline)
        for s in self.steps:
            names += [s.target, *s.predictors]
        names += list(self.treatments)
        return tuple(dict.fromkeys(names))

    @classmethod
    def from_estimand(cls, e: Expression, g: MDag, data: Optional[Dataset] = None, history: str = "lag1", families: Optional[Mapping[str, str]] = None) -> "GFormulaPlan":
        """Translate an identified factorization into a forward-simulation plan.

        Factors without conditioning variables form the baseline block, which
        is resampled from the data. Treatments are the variables fixed to a
        symbolic value; the outcome is the variable fixed to a number.
        ``history="lag1"`` keeps baseline variables plus those of the current
        and previous time point as predictors; ``"full"`` keeps all of them.
        """
        if history not in ("lag1", "full"):
            raise ValueError("history must be 'lag1' or 'full'")
        conds = list(dict.fromkeys(e.conditionals()))
        outcome, ov = None, None
        treatments: List[str] = []
        for c in conds:
            for k, v in c.fixed:
                if k in c.targets and isinstance(v, (int, float)):
                    outcome, ov = k, float(v)
                elif k not in c.targets and not isinstance(v, (int, float)) and k not in treatments:
                    treatments.append(k)
        if outcome is None:
            top = [c for c in conds if not any(t in c2.given for c2 in conds for t in c.targets)]
            outcome = top[0].targets[0]
        baseline = tuple(t for c in conds if not c.given for t in c.targets)
        rest = [c for c in conds if c.given]
        # order factors so that conditioning variables are simulated first
        done = set(baseline) | set(treatments)
        ordered: List[Conditional] = []
        while rest:
            ready = [c for c in rest if set(c.given) <= done]
            if not ready:
                raise ValueError("factorization is not a sequential chain")
            ready.sort(key=lambda c: (c.targets == (outcome,), g.nodes.index(c.targets[0])))
            c = ready[0]
            ordered.append(c)
            rest.remove(c)
            done |= set(c.targets)
        times = sorted({g.time(v) for v in g.nodes if g.time(v) is not None})
        steps = []
        for c in ordered:
            for t in c.targets:
                preds = [v for v in c.given]
                if history == "lag1":
                    tt = g.time(t)
                    keep = {tt}
                    if tt is not None and tt in times and times.index(tt) > 0:
                        keep.add(times[times.index(tt) - 1])
                    preds = [v for v in preds if v in baseline or g.time(v) is None or g.time(v) in keep]
                steps.append(FactorModel(t, tuple(preds), _guess_family(t, data, families)))
        if ordered and outcome not in ordered[-1].targets:
            raise ValueError("outcome factor must come last")
        return cls(baseline, tuple(steps), tuple(treatments), outcome, ov)


def _guess_family(name: str, data: Optional[Dataset], families: Optional[Mapping[str, str]]) -> str:
    if families and name in families:
        return families[name]
    if data is None:
        return "logistic"
    if name in data.meta.get("categories", {}):
        return "multinomial"
    x = data.values(name)
    x = x[~np.isnan(x)]
    return "logistic" if np.all((x == 0) | (x == 1)) else "linear"


# -- g-computation ---------------------------------------------------------------------------


@dataclass
class CcrcEstimate:
    grid: np.ndarray
    values: np.ndarray
    method: str
    replications: int = 1
    info: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.grid.shape != self.values.shape:
            raise GridMismatch("grid and values differ in length")


def _rows_for(d: Dataset, names: Sequence[str], mode: str) -> np.ndarray:
    if mode == "complete":
        if any(d.missing.get(v) is not None and d.missing[v].any() for v in names):
            raise ValueError("complete mode needs data without missing cells")
        return np.ones(d.n, dtype=bool)
    return d.rows_observed(names)


def fit_plan(d: Dataset, plan: GFormulaPlan, mode: str = "available", transforms=None) -> Dict[str, Tuple[Design, RegressionModel]]:
    """Fit one main-effects model per plan step on its row subsample."""
    if mode not in ("available", "complete", "complete-case"):
        raise ValueError(f"unknown mode {mode!r}")
    cats = {k: tuple(v) for k, v in d.meta.get("categories", {}).items()}
    tr = dict(DEFAULT_TRANSFORMS if transforms is None else transforms)
    allvars = plan.variables
    models = {}
    cc = d.rows_observed(allvars) if mode == "complete-case" else None
    for s in plan.steps:
        design = Design(s.predictors, {k: cats[k] for k in s.predictors if k in cats}, tr)
        rows = cc if cc is not None else _rows_for(d, (s.target, *s.predictors), mode)
        sub = {v: d.columns[v][rows] for v in (s.target, *s.predictors)}
        n = int(rows.sum())
        if n < MIN_ROWS:
            raise InsufficientRows(f"{s.target}: {n} available rows")
        X = design.matrix(sub, n)
        models[s.target] = (design, fit(s.family, sub[s.target], X, design.names))
    return models


def _mean_from_eta(model: RegressionModel, eta: np.ndarray) -> np.ndarray:
    if model.family == "logistic":
        return _expit(eta)
    if model.family == "multinomial":
        eta = np.column_stack([np.zeros(len(eta)), eta])
        eta -= eta.max(axis=1, keepdims=True)
        p = np.exp(eta)
        return p / p.sum(axis=1, keepdims=True)
    return eta


def gcompute(
    d: Dataset,
    plan: GFormulaPlan,
    grid: Sequence[float] = GRID,
    mc_draws: int = 10_000,
    seed: int = 0,
    mode: str = "available",
    method: Optional[str] = None,
    transforms=None,
) -> CcrcEstimate:
    """Plug-in Monte-Carlo g-computation of P(outcome = value; do(treatments = a)).

    All grid values share the same baseline resample and uniform draws, so the
    curve is smooth in ``a`` and differences between grid points carry little
    Monte-Carlo noise.
    """
    grid = np.asarray(grid, dtype=float)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(zlib.crc32(b"gcompute"),))))
    models = fit_plan(d, plan, mode, transforms)
    base_rows = np.flatnonzero(d.rows_observed(plan.baseline) if mode != "complete" else np.ones(d.n, bool))
    if len(base_rows) < MIN_ROWS:
        raise InsufficientRows(f"baseline: {len(base_rows)} available rows")
    idx = rng.choice(base_rows, size=mc_draws, replace=True)
    G, N = len(grid), mc_draws
    env: Dict[str, np.ndarray] = {v: np.tile(d.columns[v][idx], G) for v in plan.baseline}
    for t in plan.treatments:
        env[t] = np.repeat(grid, N)
    out = None
    for s in plan.steps:
        design, model = models[s.target]
        eta = design.linear_predictor(env, model.coef, G * N)
        if s.target == plan.outcome:
            mean = _mean_from_eta(model, eta)
            if model.family == "multinomial":
                k = model.levels.index(plan.outcome_value)
                mean = mean[:, k]
            elif model.family == "logistic" and plan.outcome_value == 0:
                mean = 1 - mean
            out = mean.reshape(G, N).mean(axis=1)
            continue
        if model.family == "logistic":
            u = np.tile(rng.random(N), G)
            env[s.target] = (u < _expit(eta)).astype(float)
        elif model.family == "linear":
            z = np.tile(rng.standard_normal(N), G)
            env[s.target] = eta + model.sigma * z
        else:
            P = _mean_from_eta(model, eta)
            u = np.tile(rng.random(N), G)
            k = (u[:, None] > np.cumsum(P, axis=1)).sum(axis=1)
            env[s.target] = np.asarray(model.levels)[np.minimum(k, len(model.levels) - 1)]
    if out is None:
        raise ValueError("plan has no outcome step")
    info = {"mode": mode, "rows": {k: m.n for k, (_, m) in models.items()}, "separation": sorted(k for k, (_, m) in models.items() if m.separation)}
    return CcrcEstimate(grid, np.clip(out, 0.0, 1.0), method or mode, 1, info)


# -- multiple imputation ---------------------------------------------------------------------------


def _bounds_for(name: str, bounds: Mapping[str, Tuple[float, float]]):
    return bounds.get(name) or bounds.get(_family_of(name))


def impute_mi(
    d: Dataset,
    m: int = 5,
    seed: int = 0,
    predictors: Optional[Sequence[str]] = None,
    sweeps: int = 10,
    bounds: Mapping[str, Tuple[float, float]] = DEFAULT_BOUNDS,
    max_redraws: int = 100,
) -> List[Dataset]:
    """Multiple imputation by chained equations.

    Incomplete columns are visited in column order; each is regressed on all
    other predictor columns (current imputations included) with a
    family-appropriate GLM whose coefficients are drawn around the MLE, and
    missing cells are drawn from the resulting predictive distribution.
    Bounded variables are redrawn until they fall inside their bounds.
    """
    if predictors is None:
        layers = d.meta.get("layers", {})
        predictors = [c for c in d.columns if layers.get(c, "c") == "c" and not c.startswith("M_")]
    # constant columns carry no information and break the design rank
    predictors = [c for c in predictors if np.nanstd(d.values(c)) > 0]
    targets = [c for c in predictors if d.missing.get(c) is not None and d.missing[c].any()]
    if not targets:
        return [d.copy() for _ in range(m)]
    cats = {k: tuple(v) for k, v in d.meta.get("categories", {}).items()}
    binary = {c for c in targets if np.all(np.isin(d.columns[c][~d.missing[c]], (0.0, 1.0)))}
    # fill with observed values only: the hidden true values must not leak
    for c in targets:
        if np.isnan(d.values(c)[~d.missing[c]]).any():
            raise ValueError(f"{c}: NaN among observed cells")
    out = []
    for j in range(m):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(zlib.crc32(b"impute"), j))))
        cols = {c: np.asarray(d.columns[c], dtype=float).copy() for c in predictors}
        for c in targets:
            miss = d.missing[c]
            obs = cols[c][~miss]
            cols[c][miss] = rng.choice(obs, size=int(miss.sum()))
        flagged = []
        starts: Dict[str, np.ndarray] = {}
        for sweep in range(sweeps):
            for c in targets:
                miss = d.missing[c]
                others = tuple(v for v in predictors if v != c)
                design = Design(others, {k: cats[k] for k in others if k in cats})
                X = design.matrix(cols, d.n)
                fam = "logistic" if c in binary else "linear"
                with warnings.catch_warnings(record=True) as caught:
                    warnings.simplefilter("always")
                    model = fit(fam, cols[c][~miss], X[~miss], start=starts.get(c), check=sweep == 0)
                starts[c] = model.coef
                if caught and sweep == sweeps - 1:
                    flagged.append(c)
                model = model.perturbed(rng)
                Xm = X[miss]
                if fam == "logistic":
                    cols[c][miss] = (rng.random(len(Xm)) < model.predict(Xm)).astype(float)
                    continue
                mu = model.predict(Xm)
                draw = mu + model.sigma * rng.standard_normal(len(Xm))
                b = _bounds_for(c, bounds)
                if b is not None:
                    lo, hi = b
                    bad = (draw < lo) | (draw > hi)
                    tries = 0
                    while bad.any() and tries < max_redraws:
                        draw[bad] = mu[bad] + model.sigma * rng.standard_normal(int(bad.sum()))
                        bad = (draw < lo) | (draw > hi)
                        tries += 1
                    draw = np.clip(draw, lo, hi)
                cols[c][miss] = draw
        if flagged:
            warnings.warn(f"imputation models for {sorted(set(flagged))} did not converge cleanly", NonConvergence, stacklevel=2)
        columns = dict(d.columns)
        columns.update({c: cols[c] for c in targets})
        meta = {**d.meta, "imputation": j, "nonconverged": sorted(set(flagged))}
        out.append(Dataset(columns, {}, meta))
    return out


def pool(estimates: Sequence[CcrcEstimate], method: str = "mi") -> CcrcEstimate:
    """Pointwise mean of curves estimated on the imputed datasets."""
    if not estimates:
        raise ValueError("nothing to pool")
    grid = estimates[0].grid
    for e in estimates[1:]:
        if e.grid.shape != grid.shape or not np.allclose(e.grid, grid):
            raise GridMismatch("curves were estimated on different grids")
    vals = np.mean([e.values for e in estimates], axis=0)
    return CcrcEstimate(grid, vals, method, len(estimates))


# -- Monte-Carlo intervals -------------------------------------------------------------------------


@dataclass(frozen=True)
class McInterval:
    grid: np.ndarray
    mean_diff: np.ndarray
    sd: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    replications: int

    @property
    def half_width(self) -> np.ndarray:
        return (self.upper - self.lower) / 2

    def excludes_zero(self) -> np.ndarray:
        return (self.lower > 0) | (self.upper < 0)


def mc_interval(estimates, truths, grid: Sequence[float] = GRID) -> McInterval:
    """mean(estimate - truth) ± 2·sd/√R per grid point."""
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    R = est.shape[0]
    if R < 2:
        raise ValueError("need at least two replications")
    diff = est - np.asarray(truths, dtype=float)[None, :]
    mean = diff.mean(axis=0)
    sd = diff.std(axis=0, ddof=1)
    hw = 2 * sd / np.sqrt(R)
    return McInterval(np.asarray(grid, dtype=float), mean, sd, mean - hw, mean + hw, R)


# -- truth and replication harness -------------------------------------------------------------------


def truth_curve(spec: ScmSpec, plan: GFormulaPlan, grid: Sequence[float] = GRID, n: int = 100_000, seed: int = 0) -> np.ndarray:
    """Interventional truth on the grid with common random numbers across a."""
    vals = []
    for a in grid:
        p = interventional_mean(spec, {t: float(a) for t in plan.treatments}, plan.outcome, n, seed)
        vals.append(p if plan.outcome_value in (1.0, None) else 1 - p)
    return np.asarray(vals)


@dataclass
class SimulationConfig:
    sim: str = "sim1"
    variant: str = "main"
    n: int = 5000
    reps: int = 100
    seed: int = 1
    mc_draws: int = 10_000
    m: int = 5
    week: int = 84
    history: str = "lag1"
    truth_n: int = 100_000
    methods: Tuple[str, ...] = ("complete", "available", "mi")
    grid: Tuple[float, ...] = tuple(GRID)


@dataclass
class SimulationResult:
    config: SimulationConfig
    grid: np.ndarray
    truth: np.ndarray
    estimates: Dict[str, np.ndarray]  # method -> (R_ok, G)
    skipped: Dict[str, int]

    def interval(self, method: str) -> McInterval:
        return mc_interval(self.estimates[method], self.truth, self.grid)

    def mean_curve(self, method: str) -> np.ndarray:
        return self.estimates[method].mean(axis=0)


def _setup(cfg: SimulationConfig):
    from .fixtures import cohort_graph, theta_query
    from .identify import identify
    from .scm import cohort_spec

    spec = cohort_spec(cfg.variant)
    g = cohort_graph(cfg.variant)
    res = identify(theta_query(cfg.week), g, "backdoor")
    return spec, g, res.estimand


def run_replication(cfg: SimulationConfig, r: int, _cache={}) -> Dict[str, Optional[np.ndarray]]:
    key = (cfg.variant, cfg.week)
    if key not in _cache:
        _cache[key] = _setup(cfg)
    spec, g, estimand = _cache[key]
    full = sample(spec, cfg.n, cfg.seed, r)
    obs = apply_missingness(full, cfg.sim)
    plan = GFormulaPlan.from_estimand(estimand, g, full, cfg.history)
    grid = np.asarray(cfg.grid)
    gseed = cfg.seed * 1_000_003 + r
    out: Dict[str, Optional[np.ndarray]] = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", Separation)
        warnings.simplefilter("ignore", NonConvergence)
        for method in cfg.methods:
            try:
                if method == "complete":
                    out[method] = gcompute(full, plan, grid, cfg.mc_draws, gseed, "complete").values
                elif method == "available":
                    out[method] = gcompute(obs, plan, grid, cfg.mc_draws, gseed, "available").values
                elif method == "complete-case":
                    out[method] = gcompute(obs, plan, grid, cfg.mc_draws, gseed, "complete-case").values
                elif method == "mi":
                    imps = impute_mi(obs, cfg.m, gseed)
                    out[method] = pool([gcompute(x, plan, grid, cfg.mc_draws, gseed, "complete") for x in imps]).values
                else:
                    raise ValueError(f"unknown method {method!r}")
            except (InsufficientRows, RankDeficient) as exc:
                log.warning("replication %d, %s skipped: %s", r, method, exc)
                out[method] = None
    return out


def _rep_worker(args):
    cfg, r = args
    return r, run_replication(cfg, r)


def run_simulation(cfg: SimulationConfig, jobs: int = 1, progress: Optional[Callable[[int], None]] = None) -> SimulationResult:
    """Run ``cfg.reps`` seeded replications; aggregation ignores completion order."""
    spec, g, estimand = _setup(cfg)
    grid = np.asarray(cfg.grid)
    probe = sample(spec, 50, cfg.seed, 0)
    plan = GFormulaPlan.from_estimand(estimand, g, probe, cfg.history)
    truth = truth_curve(spec, plan, grid, cfg.truth_n, cfg.seed)
    results: Dict[int, Dict[str, Optional[np.ndarray]]] = {}
    work = [(cfg, r) for r in range(cfg.reps)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            for r, res in ex.map(_rep_worker, work):
                results[r] = res
                if progress:
                    progress(r)
    else:
        for item in work:
            r, res = _rep_worker(item)
            results[r] = res
            if progress:
                progress(r)
    est, skipped = {}, {}
    for method in cfg.methods:
        rows = [results[r][method] for r in sorted(results) if results[r][method] is not None]
        skipped[method] = cfg.reps - len(rows)
        est[method] = np.asarray(rows) if rows else np.empty((0, len(grid)))
    return SimulationResult(cfg, grid, truth, est, skipped)
