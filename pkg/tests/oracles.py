"""Brute-force reference implementations used only by the tests."""

import itertools

import numpy as np

from mdag.graph import build_mdag


def all_paths(g, a, b):
    """Every simple undirected path between a and b, as node lists."""
    nbrs = {n: set(g.parents(n)) | set(g.children(n)) for n in g.nodes}
    out = []

    def walk(path):
        last = path[-1]
        if last == b:
            out.append(list(path))
            return
        for n in sorted(nbrs[last]):
            if n not in path:
                path.append(n)
                walk(path)
                path.pop()

    walk([a])
    return out


def path_blocked(g, path, z):
    z = set(z)
    anc_z = set()
    for n in z:
        anc_z |= set(g.ancestors({n}))
    for i in range(1, len(path) - 1):
        prev, mid, nxt = path[i - 1], path[i], path[i + 1]
        collider = prev in g.parents(mid) and nxt in g.parents(mid)
        if collider:
            if mid not in anc_z:
                return True
        elif mid in z:
            return True
    return False


def dsep_oracle(g, xs, ys, zs):
    for a in xs:
        for b in ys:
            for p in all_paths(g, a, b):
                if not path_blocked(g, p, zs):
                    return False
    return True


def ancestors_oracle(g, s):
    out = set(s)
    changed = True
    while changed:
        changed = False
        for n in g.nodes:
            if n not in out and any(c in out for c in g.children(n)):
                out.add(n)
                changed = True
    return out


def random_dag(rng, n_min=3, n_max=8, p=0.35, latents=0):
    n = int(rng.integers(n_min, n_max + 1))
    names = [f"V{i}" for i in range(n)]
    edges = [(names[i], names[j]) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
    nodes = [(v, "observed") for v in names]
    for k in range(latents):
        a, b = rng.choice(n, 2, replace=False)
        nodes.append((f"U{k}", "latent"))
        edges += [(f"U{k}", names[a]), (f"U{k}", names[b])]
    return build_mdag(nodes, edges), names


def logistic_grid_mle(y, x, box=(-3.0, 3.0), steps=(61, 21, 21, 21, 21, 21, 21)):
    """Coarse-to-fine grid search of the 2-parameter logistic log-likelihood."""
    def loglik(b0, b1):
        eta = b0[..., None] + b1[..., None] * x
        return (y * eta - np.logaddexp(0, eta)).sum(axis=-1)

    c0 = c1 = 0.0
    half = (box[1] - box[0]) / 2
    lo0 = lo1 = box[0]
    hi0 = hi1 = box[1]
    for k in steps:
        g0 = np.linspace(lo0, hi0, k)
        g1 = np.linspace(lo1, hi1, k)
        B0, B1 = np.meshgrid(g0, g1, indexing="ij")
        ll = loglik(B0, B1)
        i, j = np.unravel_index(np.argmax(ll), ll.shape)
        c0, c1 = g0[i], g1[j]
        half = 2 * (g0[1] - g0[0])
        lo0, hi0, lo1, hi1 = c0 - half, c0 + half, c1 - half, c1 + half
    return np.array([c0, c1])


def undirected_connected(g, a_side, b_side):
    """BFS over the skeleton: is any node of a_side connected to b_side?"""
    nbrs = {n: set(g.parents(n)) | set(g.children(n)) for n in g.nodes}
    seen = set(a_side)
    stack = list(a_side)
    while stack:
        n = stack.pop()
        if n in b_side:
            return True
        for m in nbrs[n]:
            if m not in seen:
                seen.add(m)
                stack.append(m)
    return False


def subsets(items, max_size=None):
    items = list(items)
    top = len(items) if max_size is None else max_size
    for k in range(top + 1):
        yield from itertools.combinations(items, k)
