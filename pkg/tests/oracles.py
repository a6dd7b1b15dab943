"""Independent brute-force oracles used to validate the library paths."""

from __future__ import annotations

import itertools
import math

import numpy as np


def brute_force_matchings(pairs):
    """All matchings of an edge list via subset filtering (exponential)."""
    out = []
    n = len(pairs)
    for mask in range(1 << n):
        chosen = [pairs[k] for k in range(n) if mask >> k & 1]
        lefts = [i for i, _ in chosen]
        rights = [j for _, j in chosen]
        if len(set(lefts)) == len(lefts) and len(set(rights)) == len(rights):
            out.append(tuple(k for k in range(n) if mask >> k & 1))
    return out


def brute_force_max_matching(pairs) -> int:
    """Exhaustive recursive branch on each edge (take or skip)."""
    pairs = list(pairs)

    def go(k, used_l, used_r):
        if k == len(pairs):
            return 0
        best = go(k + 1, used_l, used_r)
        i, j = pairs[k]
        if i not in used_l and j not in used_r:
            best = max(best, 1 + go(k + 1, used_l | {i}, used_r | {j}))
        return best

    return go(0, frozenset(), frozenset())


class UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, a):
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


def union_find_components(n_left, n_right, pairs):
    """Vertex partition of the bipartite graph, as frozensets of labels."""
    uf = UnionFind(n_left + n_right)
    for i, j in pairs:
        uf.union(i, n_left + j)
    groups = {}
    for v in range(n_left + n_right):
        groups.setdefault(uf.find(v), set()).add(v)
    out = set()
    for g in groups.values():
        lefts = frozenset(v for v in g if v < n_left)
        rights = frozenset(v - n_left for v in g if v >= n_left)
        out.add((lefts, rights))
    return out


def mutual_topk_edges(desc_left, desc_right, k, min_sim):
    """O(n^2) mutual top-K filter with lower-index tie break."""
    dl = desc_left / np.linalg.norm(desc_left, axis=1, keepdims=True)
    dr = desc_right / np.linalg.norm(desc_right, axis=1, keepdims=True)
    sims = dl @ dr.T
    nl, nr = sims.shape
    top_row = []
    for i in range(nl):
        ranked = sorted(range(nr), key=lambda j: (-sims[i, j], j))
        top_row.append(set(ranked[:k]))
    top_col = []
    for j in range(nr):
        ranked = sorted(range(nl), key=lambda i: (-sims[i, j], i))
        top_col.append(set(ranked[:k]))
    edges = set()
    for i in range(nl):
        for j in range(nr):
            if j in top_row[i] and i in top_col[j] and sims[i, j] >= min_sim:
                edges.add((i, j))
    return edges, sims


def active_set_qp(pairs, p_bar, p_x, p_y):
    """Global optimum of the marginal-assignment program by KKT enumeration.

    Minimizes sum (p_e - p_bar)^2 over 0 <= p <= 1 with row/column budget
    caps.  Enumerates candidate active sets (row/column constraints at
    equality, edges clamped to 0 or 1), solves each equality KKT system,
    and accepts the first primal- and dual-feasible point; strict convexity
    makes any such point the unique global optimum.
    """
    n = len(pairs)
    rows = sorted({i for i, _ in pairs})
    cols = sorted({j for _, j in pairs})
    row_edges = {i: [k for k, (a, _) in enumerate(pairs) if a == i] for i in rows}
    col_edges = {j: [k for k, (_, b) in enumerate(pairs) if b == j] for j in cols}

    def solve(active_rows, active_cols, zero_edges, one_edges):
        free = [k for k in range(n)
                if k not in zero_edges and k not in one_edges]
        free_set = set(free)
        ridx = {i: a for a, i in enumerate(active_rows)}
        cidx = {j: len(active_rows) + b for b, j in enumerate(active_cols)}
        nun = len(active_rows) + len(active_cols)
        mu: dict = {}
        nu: dict = {}
        x = np.zeros(n)
        for k in one_edges:
            x[k] = 1.0
        if nun == 0:
            for k in free:
                x[k] = p_bar
        else:
            A = np.zeros((nun, nun))
            b = np.zeros(nun)
            for i in active_rows:
                r = ridx[i]
                fe = [k for k in row_edges[i] if k in free_set]
                ones = sum(1 for k in row_edges[i] if k in one_edges)
                b[r] = p_x - p_bar * len(fe) - ones
                for k in fe:
                    A[r, ridx[i]] -= 0.5
                    jj = pairs[k][1]
                    if jj in cidx:
                        A[r, cidx[jj]] -= 0.5
            for j in active_cols:
                r = cidx[j]
                fe = [k for k in col_edges[j] if k in free_set]
                ones = sum(1 for k in col_edges[j] if k in one_edges)
                b[r] = p_y - p_bar * len(fe) - ones
                for k in fe:
                    A[r, cidx[j]] -= 0.5
                    ii = pairs[k][0]
                    if ii in ridx:
                        A[r, ridx[ii]] -= 0.5
            sol, *_ = np.linalg.lstsq(A, b, rcond=None)
            if np.max(np.abs(A @ sol - b)) > 1e-9:
                return None
            mu = {i: sol[ridx[i]] for i in active_rows}
            nu = {j: sol[cidx[j]] for j in active_cols}
            for k in free:
                i, j = pairs[k]
                x[k] = p_bar - (mu.get(i, 0.0) + nu.get(j, 0.0)) / 2.0
        # Dual feasibility: budget multipliers nonnegative; stationarity at
        # clamped edges gives lambda = -2 p_bar + mu + nu >= 0 at zero and
        # kappa = 2 (p_bar - 1) - mu - nu >= 0 at one.
        for i in mu:
            if mu[i] < -1e-9:
                return None
        for j in nu:
            if nu[j] < -1e-9:
                return None
        for k in zero_edges:
            i, j = pairs[k]
            if -2.0 * p_bar + mu.get(i, 0.0) + nu.get(j, 0.0) < -1e-9:
                return None
        for k in one_edges:
            i, j = pairs[k]
            if 2.0 * (p_bar - 1.0) - mu.get(i, 0.0) - nu.get(j, 0.0) < -1e-9:
                return None
        # Primal feasibility, with budget equality where declared active.
        if np.min(x) < -1e-9 or np.max(x) > 1.0 + 1e-9:
            return None
        for i in rows:
            s = x[row_edges[i]].sum()
            if s > p_x + 1e-9:
                return None
            if i in mu and abs(s - p_x) > 1e-7:
                return None
        for j in cols:
            s = x[col_edges[j]].sum()
            if s > p_y + 1e-9:
                return None
            if j in nu and abs(s - p_y) > 1e-7:
                return None
        return x

    # Box-active sets are rare at the optimum, so try small ones first.
    for zero_edges, one_edges in _box_splits(n):
        zero_edges = frozenset(zero_edges)
        one_edges = frozenset(one_edges)
        for ar in _subsets(rows):
            for ac in _subsets(cols):
                x = solve(ar, ac, zero_edges, one_edges)
                if x is not None:
                    return x
    raise AssertionError("active-set enumeration found no KKT point")


def _box_splits(n):
    """(zero set, one set) pairs in order of increasing total size."""
    for total in range(n + 1):
        for nz in range(total + 1):
            for zeros in itertools.combinations(range(n), nz):
                rest = [k for k in range(n) if k not in zeros]
                for ones in itertools.combinations(rest, total - nz):
                    yield zeros, ones


def _subsets(items):
    for r in range(len(items) + 1):
        yield from itertools.combinations(items, r)


def trapezoid_auc(errors_deg, threshold):
    """Recall-curve area via dense numeric integration of the interpolant.

    The curve passes linearly through the (error, recall) points at or below
    the threshold and stays flat from the last of them to the threshold.
    """
    errors = np.sort(np.asarray(errors_deg, dtype=float))
    n = len(errors)
    kept = errors[errors <= threshold]
    xs = np.concatenate([[0.0], kept, [threshold + 1.0]])
    ys = np.concatenate([[0.0], (np.arange(len(kept)) + 1) / n,
                         [len(kept) / n]])
    grid = np.linspace(0.0, threshold, 200001)
    vals = np.interp(grid, xs, ys)
    return float(np.trapezoid(vals, grid) / threshold)
