"""Globally optimal pose search over the discretized (v1, v2) parameter space.

Every grid cell fixes the two planar rotation vectors; the remaining z-angle
phi is optimized exactly by sweeping the sorted endpoints of per-association
feasibility arcs.  The cell loop runs in the compiled kernels; this module
builds the polar lookup tables, reduces per-row results deterministically,
and materializes the tie set of co-optimal hypotheses.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .assoc import AssociationGraph
from .geometry import (TWO_PI, PoseParams, RelativePose, params_to_pose)
from .marginals import ProbabilityAssignment
from .mechanisms import MechanismConfig, score_pose

DEFAULT_GRID_N = 32
TIE_REL_TOL = 1e-9
DEFAULT_TIE_CAP = 4096

_MECH_CODE = {"cm": kernels.MECH_CM, "mcm": kernels.MECH_MCM,
              "hcm": kernels.MECH_HCM}


@dataclass(frozen=True)
class SearchGrid:
    """Cell centers of one radius-pi disk, lattice pitch pi/n."""

    n: int
    centers: np.ndarray

    @property
    def n_cells(self) -> int:
        return len(self.centers)


def discretize(n: int) -> SearchGrid:
    """Square lattice of pitch pi/n covering the disk, centers kept if inside.

    If the radius filter were ever to empty the lattice the origin cell is
    kept as a guard, so the grid is never empty.
    """
    if n < 1:
        raise ValueError("grid granularity must be at least 1")
    pitch = math.pi / n
    axis = -math.pi + (np.arange(2 * n) + 0.5) * pitch
    xx, yy = np.meshgrid(axis, axis, indexing="ij")
    centers = np.column_stack([xx.ravel(), yy.ravel()])
    keep = np.hypot(centers[:, 0], centers[:, 1]) <= math.pi
    centers = centers[keep]
    if len(centers) == 0:
        centers = np.zeros((1, 2))
    return SearchGrid(n=n, centers=np.ascontiguousarray(centers))


def snap_to_grid(v: np.ndarray, grid: SearchGrid) -> np.ndarray:
    """Nearest grid center to a point of the disk."""
    d = np.hypot(grid.centers[:, 0] - v[0], grid.centers[:, 1] - v[1])
    return grid.centers[int(np.argmin(d))].copy()


# ---------------------------------------------------------------------------
# Standalone endpoint sweeps over explicit event lists
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IntervalEvent:
    """One feasibility-arc endpoint; ``kind`` is 'enter' or 'exit'."""

    phi: float
    kind: str
    edge: int
    left: int = 0
    right: int = 0
    prob: float = 0.0


def events_from_arcs(arcs) -> list[IntervalEvent]:
    """Enter/exit event pairs for (lo, hi, edge[, left, right, prob]) arcs."""
    events = []
    for arc in arcs:
        lo, hi, edge = arc[0], arc[1], arc[2]
        left = arc[3] if len(arc) > 3 else 0
        right = arc[4] if len(arc) > 4 else 0
        prob = arc[5] if len(arc) > 5 else 0.0
        events.append(IntervalEvent(float(lo), "enter", edge, left, right, prob))
        events.append(IntervalEvent(float(hi), "exit", edge, left, right, prob))
    return events


def _sorted_events(events) -> list[IntervalEvent]:
    return sorted(events, key=lambda e: (e.phi, 0 if e.kind == "enter" else 1, e.edge))


def check_event_balance(events) -> bool:
    """True when every enter has a matching exit for the same edge."""
    open_edges: dict[int, int] = {}
    for e in _sorted_events(events):
        open_edges[e.edge] = open_edges.get(e.edge, 0) + (1 if e.kind == "enter" else -1)
        if open_edges[e.edge] < 0:
            return False
    return all(v == 0 for v in open_edges.values())


def sweep_cm(events, return_trace: bool = False):
    """Point of maximum interval overlap (stabbing), earliest endpoint wins."""
    ordered = _sorted_events(events)
    best_phi = 0.0
    best = 0
    cur = 0
    trace = []
    for ev in ordered:
        cur += 1 if ev.kind == "enter" else -1
        trace.append(cur)
        if cur > best:
            best = cur
            best_phi = ev.phi
    if return_trace:
        return best_phi, best, ordered, trace
    return best_phi, best


def sweep_hcm(events, left_totals, right_totals, config: MechanismConfig,
              return_trace: bool = False):
    """Max harmonic score over phi, maintained incrementally event by event."""
    ordered = _sorted_events(events)
    wx: dict[int, float] = {}
    wy: dict[int, float] = {}
    cur = 0.0
    best = 0.0
    best_phi = 0.0
    trace = []
    for ev in ordered:
        inc_x = ev.prob / float(left_totals[ev.left])
        inc_y = ev.prob / float(right_totals[ev.right])
        sign = 1.0 if ev.kind == "enter" else -1.0
        old_x = wx.get(ev.left, 0.0)
        old_y = wy.get(ev.right, 0.0)
        new_x = old_x + sign * inc_x
        new_y = old_y + sign * inc_y
        cur += math.log((1.0 + config.c_x * new_x) / (1.0 + config.c_x * old_x))
        cur += math.log((1.0 + config.c_y * new_y) / (1.0 + config.c_y * old_y))
        wx[ev.left] = new_x
        wy[ev.right] = new_y
        trace.append(cur)
        if cur > best:
            best = cur
            best_phi = ev.phi
    if return_trace:
        return best_phi, best, ordered, trace
    return best_phi, best


def sweep_mcm(events, return_trace: bool = False):
    """Max matching cardinality over phi, maintained by local augmentation.

    Insertions attempt one augmenting path; deleting a matched edge frees its
    endpoints and attempts one re-augmentation.  Either event changes the
    optimum by at most one, so a single successful path restores maximality.
    """
    ordered = _sorted_events(events)
    active: dict[int, tuple[int, int]] = {}
    match_l: dict[int, int] = {}
    match_r: dict[int, int] = {}

    def try_augment() -> int:
        adj: dict[int, list[tuple[int, int]]] = {}
        for edge, (i, j) in sorted(active.items()):
            adj.setdefault(i, []).append((j, edge))
        for src in sorted(adj):
            if src in match_l:
                continue
            seen: set[int] = set()

            def dfs(i: int) -> bool:
                for j, edge in adj.get(i, []):
                    if j in seen:
                        continue
                    seen.add(j)
                    if j not in match_r or dfs(match_r[j][0]):
                        match_l[i] = edge
                        match_r[j] = (i, edge)
                        return True
                return False

            if dfs(src):
                return 1
        return 0

    cur = 0
    best = 0
    best_phi = 0.0
    trace = []
    for ev in ordered:
        if ev.kind == "enter":
            active[ev.edge] = (ev.left, ev.right)
            cur += try_augment()
        else:
            i, j = active.pop(ev.edge)
            if match_l.get(i) == ev.edge:
                del match_l[i]
                del match_r[j]
                cur -= 1
                cur += try_augment()
        trace.append(cur)
        if cur > best:
            best = cur
            best_phi = ev.phi
    if return_trace:
        return best_phi, best, ordered, trace
    return best_phi, best


# ---------------------------------------------------------------------------
# Full grid search
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TiedHypothesis:
    params: PoseParams
    pose: RelativePose
    score: float
    cell: tuple[int, int]


@dataclass
class SearchResult:
    mechanism: str
    score: float
    params: PoseParams
    pose: RelativePose
    ties: list[TiedHypothesis]
    tie_overflow: bool
    diagnostics: dict
    elapsed: float


def _edge_tables(centers: np.ndarray, bearings: np.ndarray,
                 feature_idx: np.ndarray):
    """Polar angle/azimuth (plus sin/cos) of Exp(v) @ bearing, edge-major."""
    n = len(centers)
    theta = np.hypot(centers[:, 0], centers[:, 1])
    axes = np.zeros((n, 3))
    nz = theta > 1e-12
    axes[nz, 0] = centers[nz, 0] / theta[nz]
    axes[nz, 1] = centers[nz, 1] / theta[nz]
    K = np.zeros((n, 3, 3))
    K[:, 0, 2] = axes[:, 1]
    K[:, 1, 2] = -axes[:, 0]
    K[:, 2, 0] = -axes[:, 1]
    K[:, 2, 1] = axes[:, 0]
    s = np.sin(theta)[:, None, None]
    c = (1.0 - np.cos(theta))[:, None, None]
    R = np.eye(3)[None, :, :] + s * K + c * (K @ K)
    pts = bearings[feature_idx]
    rot = np.einsum("cab,eb->cea", R, pts)
    z = np.clip(rot[..., 2], -1.0, 1.0)
    th = np.arccos(z)
    st = np.hypot(rot[..., 0], rot[..., 1])
    ph = np.mod(np.arctan2(rot[..., 1], rot[..., 0]), TWO_PI)
    return (np.ascontiguousarray(th), np.ascontiguousarray(ph),
            np.ascontiguousarray(st), np.ascontiguousarray(z))


def _arcsin_table(sin_theta: np.ndarray, epsilon: float) -> np.ndarray:
    """arcsin(sin(eps)/sin(theta)) per table entry, pi where undefined.

    The azimuth half-width for theta1 < theta2 is the sum of the two sides'
    entries; encoding the undefined case as pi makes any sum reach the
    always-feasible cutoff, matching the scalar rule.
    """
    se = math.sin(epsilon)
    out = np.full(sin_theta.shape, math.pi)
    ok = sin_theta >= se
    np.divide(se, sin_theta, out=out, where=ok)
    out[ok] = np.arcsin(out[ok])
    return np.ascontiguousarray(out)


def _left_csr(graph: AssociationGraph):
    indptr = np.zeros(graph.n_left + 1, dtype=np.int64)
    for e in graph.edges:
        indptr[e.i + 1] += 1
    indptr = np.cumsum(indptr).astype(np.int64)
    # Edges are sorted by (i, j), so positions grouped by i are already CSR.
    return indptr, np.arange(graph.n_edges, dtype=np.int64)


def _weight_increments(graph: AssociationGraph,
                       assignment: ProbabilityAssignment | None,
                       mechanism: str):
    if mechanism != "hcm":
        z = np.zeros(graph.n_edges)
        return z, z
    if assignment is None:
        raise ValueError("harmonic search requires a probability assignment")
    winc_x = np.empty(graph.n_edges)
    winc_y = np.empty(graph.n_edges)
    for k in range(graph.n_edges):
        i = graph.edge_i[k]
        j = graph.edge_j[k]
        tx = float(assignment.left_totals[i])
        ty = float(assignment.right_totals[j])
        if tx <= 0.0 or ty <= 0.0:
            raise ValueError("assignment leaves an edge-bearing vertex at zero total")
        winc_x[k] = assignment.probs[k] / tx
        winc_y[k] = assignment.probs[k] / ty
    return winc_x, winc_y


class _CellEvaluator:
    """Shared table/scratch setup for kernel calls on one problem instance."""

    def __init__(self, graph: AssociationGraph, config: MechanismConfig,
                 grid: SearchGrid, mechanism: str,
                 assignment: ProbabilityAssignment | None):
        if mechanism not in _MECH_CODE:
            raise ValueError(f"unknown mechanism {mechanism!r}")
        if graph.n_edges == 0:
            raise ValueError("association graph has no edges")
        self.graph = graph
        self.config = config
        self.grid = grid
        self.mechanism = mechanism
        self.mech_code = _MECH_CODE[mechanism]
        self.th1, self.ph1, self.st1, self.ct1 = _edge_tables(
            grid.centers, graph.left, graph.edge_i)
        self.th2, self.ph2, self.st2, self.ct2 = _edge_tables(
            grid.centers, graph.right, graph.edge_j)
        self.asn1 = _arcsin_table(self.st1, config.epsilon)
        self.asn2 = _arcsin_table(self.st2, config.epsilon)
        self.winc_x, self.winc_y = _weight_increments(graph, assignment, mechanism)
        self.indptr, self.left_edges = _left_csr(graph)
        self.consts = (2.0 * config.epsilon,
                       math.cos(2.0 * config.epsilon), config.c_x, config.c_y)

    def _common_args(self):
        return (self.graph.n_left, self.graph.n_right,
                self.th1, self.ph1, self.st1, self.ct1,
                self.th2, self.ph2, self.st2, self.ct2,
                self.asn1, self.asn2,
                self.graph.edge_i, self.graph.edge_j, self.winc_x, self.winc_y,
                self.indptr, self.left_edges,
                self.mech_code, *self.consts)

    def row_maxima(self, batch_rows: int = 1024) -> np.ndarray:
        nc = self.grid.n_cells
        out = np.empty(nc)
        for start in range(0, nc, batch_rows):
            stop = min(start + batch_rows, nc)
            kernels.eval_rows(start, stop, *self._common_args(), out)
        return out

    def collect(self, rows: np.ndarray, threshold: float, cap: int):
        out_c1 = np.empty(cap, dtype=np.int64)
        out_c2 = np.empty(cap, dtype=np.int64)
        out_score = np.empty(cap)
        out_phi = np.empty(cap)
        n = kernels.collect_cells(np.asarray(rows, dtype=np.int64), threshold,
                                  *self._common_args(),
                                  out_c1, out_c2, out_score, out_phi, cap)
        overflow = n > cap
        n = min(n, cap)
        return out_c1[:n], out_c2[:n], out_score[:n], out_phi[:n], overflow


def evaluate_cell(graph: AssociationGraph, config: MechanismConfig,
                  v1: np.ndarray, v2: np.ndarray, mechanism: str,
                  assignment: ProbabilityAssignment | None = None):
    """Sweep score and optimal phi of a single (v1, v2) cell."""
    centers = np.array([np.asarray(v1, dtype=float),
                        np.asarray(v2, dtype=float)])
    grid = SearchGrid(n=1, centers=centers)
    ev = _CellEvaluator(graph, config, grid, mechanism, assignment)
    c1s, c2s, scores, phis, _ = ev.collect(np.array([0], dtype=np.int64),
                                           -1.0, 4)
    # Row 0 evaluates (v1, v1) then (v1, v2); the second cell is the one asked for.
    for a in range(len(c1s)):
        if c1s[a] == 0 and c2s[a] == 1:
            return float(scores[a]), float(phis[a])
    raise AssertionError("cell evaluation did not return the requested cell")


def set_threads(threads: int | None) -> None:
    """Cap the kernel worker pool (no-op on the fallback backend)."""
    if threads is None or not kernels.USE_NUMBA:
        return
    import numba

    numba.set_num_threads(max(1, min(threads, numba.config.NUMBA_NUM_THREADS)))


def search(graph: AssociationGraph, config: MechanismConfig, grid: SearchGrid,
           mechanism: str, assignment: ProbabilityAssignment | None = None,
           tie_cap: int = DEFAULT_TIE_CAP, threads: int | None = None,
           batch_rows: int = 1024) -> SearchResult:
    """Brute-force search of the (v1, v2, phi) space under one mechanism.

    Evaluates every cell pair of the grid, reduces with the deterministic
    (score, cell index, endpoint) order, and returns the best hypothesis
    together with all co-optimal ones (score within ``TIE_REL_TOL``
    relative), capped at ``tie_cap`` entries.
    """
    if mechanism == "mcm-hcm":
        base = search(graph, config, grid, "mcm", assignment=assignment,
                      tie_cap=tie_cap, threads=threads, batch_rows=batch_rows)
        return mcm_then_hcm(base, graph, config, assignment)

    t0 = time.perf_counter()
    set_threads(threads)
    ev = _CellEvaluator(graph, config, grid, mechanism, assignment)
    rowmax = ev.row_maxima(batch_rows=batch_rows)
    best = float(np.max(rowmax))
    threshold = best - TIE_REL_TOL * abs(best)
    rows = np.nonzero(rowmax >= threshold)[0]
    c1s, c2s, scores, phis, overflow = ev.collect(rows, threshold, tie_cap)

    ties = []
    for a in range(len(c1s)):
        params = PoseParams(phi=float(phis[a]),
                            v1=grid.centers[c1s[a]],
                            v2=grid.centers[c2s[a]])
        ties.append(TiedHypothesis(params=params, pose=params_to_pose(params),
                                   score=float(scores[a]),
                                   cell=(int(c1s[a]), int(c2s[a]))))
    # Exact-score argmax; entries are already in cell order, so the first
    # maximal one realizes the lexicographic (score, cell, endpoint) rule.
    best_idx = int(np.argmax(scores)) if len(scores) else 0
    if not ties:
        raise RuntimeError("search produced no candidate cells")
    top = ties[best_idx]
    rescored = score_pose(graph, top.pose, config, mechanism,
                          assignment=assignment)
    diagnostics = {
        "inlier_count": rescored.inliers.n_edges,
        "rescored": rescored.score,
        "cells": grid.n_cells ** 2,
        "backend": kernels.backend_name(),
    }
    if mechanism == "mcm":
        diagnostics["matching"] = rescored.matching
    if mechanism == "hcm":
        diagnostics["w_left"] = rescored.w_left
        diagnostics["w_right"] = rescored.w_right
    return SearchResult(mechanism=mechanism, score=top.score,
                        params=top.params, pose=top.pose, ties=ties,
                        tie_overflow=overflow, diagnostics=diagnostics,
                        elapsed=time.perf_counter() - t0)


def mcm_then_hcm(base: SearchResult, graph: AssociationGraph,
                 config: MechanismConfig,
                 assignment: ProbabilityAssignment | None) -> SearchResult:
    """Re-rank a matching-cardinality tie set by harmonic score.

    Ties within ``TIE_REL_TOL`` of the best harmonic score keep the original
    cell-enumeration order.
    """
    if assignment is None:
        raise ValueError("disambiguation requires a probability assignment")
    if not base.ties:
        raise ValueError("empty tie set")
    best_idx = 0
    best_score = -math.inf
    hcm_scores = []
    for idx, tie in enumerate(base.ties):
        s = score_pose(graph, tie.pose, config, "hcm", assignment=assignment).score
        hcm_scores.append(s)
        # Strictly-better wins; near-equal scores keep the earlier cell.
        if s > best_score and not math.isclose(s, best_score, rel_tol=TIE_REL_TOL):
            best_score = s
            best_idx = idx
    top = base.ties[best_idx]
    diagnostics = dict(base.diagnostics)
    diagnostics["mcm_score"] = base.score
    diagnostics["hcm_rerank"] = hcm_scores
    return SearchResult(mechanism="mcm-hcm", score=best_score,
                        params=top.params, pose=top.pose, ties=[top],
                        tie_overflow=base.tie_overflow,
                        diagnostics=diagnostics, elapsed=base.elapsed)
