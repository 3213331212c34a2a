"""Shared store for acceptance verdicts; conftest prints them at the end of the run."""

RESULTS = {}


def record(n, ok, detail):
    RESULTS[n] = (bool(ok), detail)
    line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    return ok
