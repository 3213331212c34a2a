"""Command-line front end: ``mdag classify|identify|recover|simulate|estimate|reproduce``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import fixtures
from .estimand import expression_to_dict, pretty_print
from .graph import GraphError, MDag, load_graph
from .identify import CausalQuery, load_query
from .recover import recover_query
from .taxonomy import classify_mechanism, is_closed

SCHEMA = "mdag-output/1"
OUT_ENV = "MDAG_OUT"

log = logging.getLogger("mdag")


class CheckFailed(RuntimeError):
    pass


def _graph(arg: str) -> MDag:
    if arg in fixtures.GRAPHS:
        return fixtures.GRAPHS[arg]()
    p = Path(arg)
    if p.suffix == ".json" and p.stem in fixtures.GRAPHS and not p.exists():
        return fixtures.GRAPHS[p.stem]()
    return load_graph(p)


def _query(arg: str) -> CausalQuery:
    if arg in fixtures.QUERIES:
        return fixtures.QUERIES[arg]()
    p = Path(arg)
    if p.suffix == ".json" and p.stem in fixtures.QUERIES and not p.exists():
        return fixtures.QUERIES[p.stem]()
    try:
        return load_query(p)
    except json.JSONDecodeError as exc:
        raise GraphError(f"{p}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def _outdir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV) or "mdag_out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(args, text: str, data: dict) -> None:
    if getattr(args, "json", False):
        print(json.dumps({"schema": SCHEMA, **data}, indent=1))
    else:
        print(text)


def _fmt(x: float) -> str:
    return f"{x:.10g}"


# -- subcommands ---------------------------------------------------------------------------------


def cmd_classify(args) -> int:
    g = _graph(args.graph)
    mc = classify_mechanism(g)
    cr = is_closed(g)
    lines = [f"{mc.mechanism.value}; closed: {'yes' if cr.closed else 'no'}"]
    if mc.evidence:
        lines.append("evidence (indicator <- parent):")
        lines += [f"  {m} <- {p}" for m, p in mc.evidence]
    if not cr.closed and cr.witness_path:
        lines.append("witness path: " + " - ".join(cr.witness_path))
    _emit(args, "\n".join(lines), {
        "mechanism": mc.mechanism.value,
        "evidence": [list(e) for e in mc.evidence],
        "closed": cr.closed,
        "witness_path": list(cr.witness_path or ()),
    })
    return 0


def cmd_identify(args) -> int:
    from .identify import identify

    g, q = _graph(args.graph), _query(args.query)
    res = identify(q, g, args.method)
    if not res.identifiable:
        _emit(args, f"NOT IDENTIFIABLE\n{res.failure_witness}", {"identifiable": False, "witness": res.failure_witness})
        return 2
    text = pretty_print(res.estimand, "latex" if args.latex else "text")
    if args.out:
        out = _outdir(args)
        path = out / f"{q.name or 'query'}_{args.method}.json"
        path.write_text(json.dumps({"schema": SCHEMA, "method": args.method, "estimand": expression_to_dict(res.estimand), "text": pretty_print(res.estimand)}, indent=1) + "\n", encoding="utf-8")
    _emit(args, text, {"identifiable": True, "method": res.method, "estimand": expression_to_dict(res.estimand), "text": pretty_print(res.estimand)})
    return 0


def cmd_recover(args) -> int:
    g, q = _graph(args.graph), _query(args.query)
    ident, rep = recover_query(q, g, args.method)
    lines = ["RECOVERABLE" if rep.recoverable else "NOT RECOVERABLE"]
    if rep.recoverable:
        lines.append(pretty_print(rep.recovered_estimand))
        if args.steps:
            for f in rep.per_factor:
                lines += [f"  {s}" for s in f.steps]
    else:
        for f in rep.failures:
            lines.append(f"witness: {f}")
            if args.steps and f.detail:
                lines.append(f"  {f.detail}")
        if rep.note:
            lines.append(rep.note)
    _emit(args, "\n".join(lines), {
        "recoverable": rep.recoverable,
        "closed": rep.closed,
        "recovered": expression_to_dict(rep.recovered_estimand) if rep.recovered_estimand is not None else None,
        "witnesses": [{"factor": pretty_print(f.factor), "reasons": [list(r) for r in f.reasons]} for f in rep.failures],
        "note": rep.note,
    })
    return 0 if rep.recoverable else 3


def _spec(arg: str):
    from .scm import cohort_spec, load_spec

    return cohort_spec(arg) if arg in ("main", "alt1", "alt2") else load_spec(arg)


def cmd_simulate(args) -> int:
    from .scm import apply_missingness, sample, sample_interventional

    spec = _spec(args.spec)
    do = dict(_parse_do(args.do))
    if do:
        d = sample_interventional(spec, do, args.n, args.seed, args.replication)
    else:
        d = sample(spec, args.n, args.seed, args.replication)
        if args.scenario != "none":
            d = apply_missingness(d, args.scenario)
    out = _outdir(args)
    stem = args.name or f"{spec.name}_{args.scenario if not do else 'do'}_seed{args.seed}"
    cols = [c for c in d.columns if args.all_columns or d.meta["layers"].get(c, "c") == "c" or c.startswith("M_")]
    d.to_csv(out / f"{stem}.csv", cols)
    d.write_metadata(out / f"{stem}.meta.json")
    print(out / f"{stem}.csv")
    return 0


def _parse_do(items: Optional[Sequence[str]]):
    for item in items or ():
        name, _, val = item.partition("=")
        if not _:
            raise SystemExit(f"--do expects NAME=VALUE, got {item!r}")
        yield name.strip(), float(val)


def cmd_estimate(args) -> int:
    from .estimate import GRID, GFormulaPlan, gcompute, impute_mi, pool
    from .identify import identify
    from .scm import Dataset

    meta = args.meta or str(Path(args.data).with_suffix("")) + ".meta.json"
    d = Dataset.from_csv(args.data, meta)
    g, q = _graph(args.graph), _query(args.query)
    est = identify(q, g, "backdoor").estimand
    plan = GFormulaPlan.from_estimand(est, g, d, args.history)
    grid = np.asarray(args.grid or GRID, dtype=float)
    if args.mode == "mi":
        curves = [gcompute(x, plan, grid, args.mc_draws, args.seed, "complete") for x in impute_mi(d, args.m, args.seed)]
        cur = pool(curves)
    else:
        cur = gcompute(d, plan, grid, args.mc_draws, args.seed, args.mode)
    out = _outdir(args)
    path = out / f"ccrc_{args.mode}.csv"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# schema: {SCHEMA} ccrc\n")
        fh.write(f"a,{args.mode}\n")
        for a, v in zip(cur.grid, cur.values):
            fh.write(f"{_fmt(a)},{_fmt(v)}\n")
    print(path)
    return 0


# -- reproduction ------------------------------------------------------------------------------------


def check_result(res, sim: str, variant: str) -> List[str]:
    """Acceptance thresholds for a reproduction run; returns violation messages."""
    problems = []
    tol = 0.02
    recoverable = variant in ("main", "alt2")
    for method in res.estimates:
        if res.estimates[method].shape[0] < 2:
            problems.append(f"{method}: fewer than two successful replications")
    if len(problems):
        return problems
    if "complete" in res.estimates:
        dev = np.max(np.abs(res.mean_curve("complete") - res.truth))
        if dev > tol:
            problems.append(f"complete: max |mean - truth| = {dev:.4f} > {tol}")
    if "available" in res.estimates:
        ci = res.interval("available")
        if recoverable:
            dev = np.max(np.abs(ci.mean_diff))
            if dev > tol:
                problems.append(f"available: max |mean - truth| = {dev:.4f} > {tol}")
        elif not (ci.upper[0] < 0):
            problems.append(f"available: a=0 interval [{ci.lower[0]:.4f}, {ci.upper[0]:.4f}] does not lie below zero")
    if "mi" in res.estimates and variant in ("main", "alt1") and sim == "sim1":
        ci = res.interval("mi")
        if not (ci.upper[0] < 0):
            problems.append(f"mi: a=0 interval [{ci.lower[0]:.4f}, {ci.upper[0]:.4f}] does not lie below zero")
    return problems


def write_reproduction(res, out: Path) -> List[Path]:
    written = []
    methods = list(res.estimates)
    p = out / "ccrc.csv"
    with open(p, "w", encoding="utf-8") as fh:
        fh.write(f"# schema: {SCHEMA} ccrc\n")
        fh.write(",".join(["a", "truth"] + methods) + "\n")
        means = {m: (res.mean_curve(m) if len(res.estimates[m]) else np.full(len(res.grid), np.nan)) for m in methods}
        for i, a in enumerate(res.grid):
            fh.write(",".join([_fmt(a), _fmt(res.truth[i])] + [_fmt(means[m][i]) for m in methods]) + "\n")
    written.append(p)
    for m in methods:
        if res.estimates[m].shape[0] < 2:
            continue
        ci = res.interval(m)
        p = out / f"ci_{m}.csv"
        with open(p, "w", encoding="utf-8") as fh:
            fh.write(f"# schema: {SCHEMA} mc-interval\n")
            fh.write("a,mean_diff,lower,upper,replications\n")
            for i, a in enumerate(res.grid):
                fh.write(f"{_fmt(a)},{_fmt(ci.mean_diff[i])},{_fmt(ci.lower[i])},{_fmt(ci.upper[i])},{ci.replications}\n")
        written.append(p)
    p = out / "plot_data.json"
    cfg = res.config
    data = {
        "schema": SCHEMA,
        "config": {"sim": cfg.sim, "variant": cfg.variant, "n": cfg.n, "reps": cfg.reps, "seed": cfg.seed, "mc_draws": cfg.mc_draws, "m": cfg.m, "week": cfg.week},
        "grid": [float(a) for a in res.grid],
        "truth": [float(x) for x in res.truth],
        "replications": {m: [[float(x) for x in row] for row in res.estimates[m]] for m in methods},
        "skipped": res.skipped,
    }
    p.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    written.append(p)
    return written


def cmd_reproduce(args) -> int:
    from .estimate import SimulationConfig, run_simulation

    sim = f"sim{args.sim}"
    methods = tuple(args.methods.split(","))
    cfg = SimulationConfig(sim=sim, variant=args.graph, n=args.n, reps=args.reps, seed=args.seed, mc_draws=args.mc_draws, m=args.m, week=args.week, methods=methods, truth_n=args.truth_n)
    if args.m != 5:
        log.info("using m=%d imputations (default 5)", args.m)
    jobs = args.jobs or os.cpu_count() or 1
    res = run_simulation(cfg, jobs=min(jobs, args.reps))
    out = _outdir(args) / f"{sim}_{args.graph}"
    out.mkdir(parents=True, exist_ok=True)
    for p in write_reproduction(res, out):
        print(p)
    if args.check:
        problems = check_result(res, sim, args.graph)
        for msg in problems:
            print(f"CHECK FAILED: {msg}", file=sys.stderr)
        if problems:
            return 1
        print("CHECK PASSED")
    return 0


# -- parser ------------------------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mdag", description="Graphical missing-data analysis: m-DAGs, identification, recoverability, simulation.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("classify", help="missingness mechanism and closedness of an m-DAG")
    p.add_argument("--graph", required=True, help="graph JSON file or fixture name")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("identify", help="identify a causal query")
    p.add_argument("--graph", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--method", choices=("idc", "backdoor"), default="idc")
    p.add_argument("--latex", action="store_true")
    p.add_argument("--json", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("recover", help="recoverability of an identified query")
    p.add_argument("--graph", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--method", choices=("idc", "backdoor"), default="idc")
    p.add_argument("--steps", action="store_true", help="print derivation steps")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_recover)

    p = sub.add_parser("simulate", help="sample a dataset from an SCM")
    p.add_argument("--spec", default="main", help="main|alt1|alt2 or an SCM JSON file")
    p.add_argument("--n", type=int, default=5000)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--replication", type=int, default=0)
    p.add_argument("--scenario", choices=("sim1", "sim2", "none"), default="sim1")
    p.add_argument("--do", action="append", metavar="NAME=VALUE")
    p.add_argument("--all-columns", action="store_true", help="also write the missingness-layer causes")
    p.add_argument("--name")
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="g-computation CCRC from a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--meta")
    p.add_argument("--graph", default="g_main")
    p.add_argument("--query", default="theta84")
    p.add_argument("--mode", choices=("available", "complete", "complete-case", "mi"), default="available")
    p.add_argument("--history", choices=("lag1", "full"), default="lag1")
    p.add_argument("--mc-draws", type=int, default=10_000)
    p.add_argument("--m", type=int, default=5)
    p.add_argument("--grid", type=float, nargs="+")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("reproduce", help="replicated simulation study")
    p.add_argument("--sim", type=int, choices=(1, 2), default=1)
    p.add_argument("--graph", choices=("main", "alt1", "alt2"), default="main")
    p.add_argument("--n", type=int, default=5000)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--jobs", type=int, default=0, help="worker processes (default: all CPUs)")
    p.add_argument("--mc-draws", type=int, default=10_000)
    p.add_argument("--m", type=int, default=5)
    p.add_argument("--week", type=int, default=84)
    p.add_argument("--truth-n", type=int, default=100_000)
    p.add_argument("--methods", default="complete,available,mi")
    p.add_argument("--check", action="store_true", help="exit nonzero when acceptance thresholds fail")
    p.add_argument("--out")
    p.set_defaults(func=cmd_reproduce)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (GraphError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
