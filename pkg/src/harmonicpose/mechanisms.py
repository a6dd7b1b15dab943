"""Hypothesis scoring under the three robust mechanisms.

Given a pose hypothesis, inlier associations are the graph edges whose
angular residual falls below the threshold.  A hypothesis is then scored
either by the raw inlier count (consensus), by the maximum-cardinality
matching of the inlier subgraph (matching-cardinality), or by the harmonic
log-sum of per-vertex inlier probability mass (harmonic consensus).  Small
graphs additionally support exact likelihood evaluation by enumerating all
matchings, which is the reference the fast scores approximate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .assoc import AssociationGraph
from .geometry import RelativePose, angular_residual, RESIDUAL_TOL
from .marginals import ProbabilityAssignment

MECHANISMS = ("cm", "mcm", "hcm", "mcm-hcm")

ENUMERATION_CAP = 20


@dataclass(frozen=True)
class MechanismConfig:
    """Inlier threshold, outlier error range, and the budget probabilities.

    ``delta`` is the chance scale for a spurious association to look like an
    inlier at the true pose; ``c_x``/``c_y`` are the likelihood-ratio
    constants steering how sharply each log term rewards inlier mass.
    """

    epsilon: float
    outlier_range: float
    p_x: float = 0.1
    p_y: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.epsilon < self.outlier_range:
            raise ValueError("need 0 < epsilon < outlier_range")
        if not 0.0 < self.p_x < 1.0 or not 0.0 < self.p_y < 1.0:
            raise ValueError("budget probabilities must lie in (0, 1)")

    @property
    def delta(self) -> float:
        return self.epsilon / self.outlier_range

    @property
    def c_x(self) -> float:
        return self.p_x / (1.0 - self.p_x) / self.delta

    @property
    def c_y(self) -> float:
        return self.p_y / (1.0 - self.p_y) / self.delta

    @classmethod
    def from_degrees(cls, epsilon_deg: float = 0.15, outlier_range_deg: float = 5.0,
                     p_x: float = 0.1, p_y: float = 0.1) -> "MechanismConfig":
        return cls(epsilon=math.radians(epsilon_deg),
                   outlier_range=math.radians(outlier_range_deg),
                   p_x=p_x, p_y=p_y)


@dataclass(frozen=True)
class InlierGraph:
    """Edges of an association graph whose residual is below the threshold."""

    graph: AssociationGraph
    edge_indices: tuple[int, ...]

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return [self.graph.edges[k].pair for k in self.edge_indices]

    @property
    def left_vertices(self) -> tuple[int, ...]:
        return tuple(sorted({self.graph.edges[k].i for k in self.edge_indices}))

    @property
    def right_vertices(self) -> tuple[int, ...]:
        return tuple(sorted({self.graph.edges[k].j for k in self.edge_indices}))

    @property
    def n_edges(self) -> int:
        return len(self.edge_indices)


@dataclass(frozen=True)
class HypothesisScore:
    """Mechanism tag, scalar score, and per-mechanism diagnostics."""

    mechanism: str
    score: float
    inliers: InlierGraph
    matching: tuple[tuple[int, int], ...] = ()
    w_left: dict | None = None
    w_right: dict | None = None


def identify_inliers(graph: AssociationGraph, pose: RelativePose,
                     config: MechanismConfig,
                     tol: float = RESIDUAL_TOL) -> InlierGraph:
    """Edges with angular residual strictly below epsilon under the pose."""
    kept = []
    for k, e in enumerate(graph.edges):
        r = angular_residual(pose, graph.left[e.i], graph.right[e.j], tol=tol)
        if r < config.epsilon:
            kept.append(k)
    return InlierGraph(graph=graph, edge_indices=tuple(kept))


def cm_score(inliers: InlierGraph) -> int:
    """Plain inlier count."""
    return inliers.n_edges


def max_matching_cardinality(inliers: InlierGraph) -> tuple[int, list[tuple[int, int]]]:
    """Size of a maximum-cardinality matching of the inlier graph, plus a witness."""
    pairs = inliers.pairs
    if not pairs:
        return 0, []
    lefts = sorted({i for i, _ in pairs})
    rights = sorted({j for _, j in pairs})
    lmap = {i: a for a, i in enumerate(lefts)}
    rmap = {j: b for b, j in enumerate(rights)}
    adj: list[list[int]] = [[] for _ in lefts]
    for i, j in pairs:
        adj[lmap[i]].append(rmap[j])
    indptr = np.zeros(len(lefts) + 1, dtype=np.int64)
    for a, nbrs in enumerate(adj):
        indptr[a + 1] = indptr[a] + len(nbrs)
    indices = np.array([b for nbrs in adj for b in sorted(nbrs)], dtype=np.int64)
    card, match_l = kernels.hopcroft_karp(len(lefts), len(rights), indptr, indices)
    witness = [(lefts[a], rights[match_l[a]])
               for a in range(len(lefts)) if match_l[a] >= 0]
    return int(card), witness


def hcm_weights(inliers: InlierGraph,
                assignment: ProbabilityAssignment) -> tuple[dict, dict]:
    """Per-vertex inlier probability mass, normalized by assigned totals.

    The normalizer is the total actually assigned to the vertex (which can
    fall short of the budget), so weights always land in [0, 1].
    """
    graph = inliers.graph
    sum_l: dict[int, float] = {}
    sum_r: dict[int, float] = {}
    for k in inliers.edge_indices:
        e = graph.edges[k]
        p = float(assignment.probs[k])
        sum_l[e.i] = sum_l.get(e.i, 0.0) + p
        sum_r[e.j] = sum_r.get(e.j, 0.0) + p
    w_left: dict[int, float] = {}
    w_right: dict[int, float] = {}
    for i, s in sum_l.items():
        total = float(assignment.left_totals[i])
        if total <= 0.0:
            raise ValueError(f"left vertex {i} has edges but zero assigned total")
        w_left[i] = s / total
    for j, s in sum_r.items():
        total = float(assignment.right_totals[j])
        if total <= 0.0:
            raise ValueError(f"right vertex {j} has edges but zero assigned total")
        w_right[j] = s / total
    return w_left, w_right


def hcm_score(w_left: dict, w_right: dict, config: MechanismConfig) -> float:
    """Harmonic consensus score: sum of log(1 + C * w) over both sides."""
    s = 0.0
    for w in w_left.values():
        s += math.log1p(config.c_x * w)
    for w in w_right.values():
        s += math.log1p(config.c_y * w)
    return s


def enumerate_matchings(pairs, cap: int = ENUMERATION_CAP) -> list[tuple[int, ...]]:
    """All matchings of an edge list, as tuples of edge positions.

    Includes the empty matching.  Refuses inputs beyond ``cap`` edges since
    the count grows exponentially.
    """
    pairs = [tuple(p) for p in pairs]
    if len(pairs) > cap:
        raise ValueError(f"{len(pairs)} edges exceed the enumeration cap {cap}")
    out: list[tuple[int, ...]] = []

    def extend(k: int, chosen: tuple[int, ...], used_l: frozenset, used_r: frozenset):
        if k == len(pairs):
            out.append(chosen)
            return
        extend(k + 1, chosen, used_l, used_r)
        i, j = pairs[k]
        if i not in used_l and j not in used_r:
            extend(k + 1, chosen + (k,), used_l | {i}, used_r | {j})

    extend(0, (), frozenset(), frozenset())
    return out


def exact_likelihood(graph: AssociationGraph, inliers: InlierGraph,
                     config: MechanismConfig, cap: int = ENUMERATION_CAP) -> float:
    """Likelihood marginalized over correspondence configurations.

    Sums, over every matching of the inlier graph, the conditional density
    (eps/delta)^(-|E|) * (1/delta)^(matching size), weighted by a uniform
    prior over all matchings of the full association graph.
    """
    all_matchings = enumerate_matchings([e.pair for e in graph.edges], cap=cap)
    p_tau = 1.0 / len(all_matchings)
    inlier_matchings = enumerate_matchings(inliers.pairs, cap=cap)
    range_term = (config.epsilon / config.delta) ** (-graph.n_edges)
    inv_delta = 1.0 / config.delta
    total = 0.0
    for m in inlier_matchings:
        total += p_tau * range_term * inv_delta ** len(m)
    return total


def conditional_likelihood(n_edges: int, matching_size: int,
                           config: MechanismConfig) -> float:
    """Density of one configuration: (eps/delta)^(-|E|) * (1/delta)^|M|."""
    return ((config.epsilon / config.delta) ** (-n_edges)
            * (1.0 / config.delta) ** matching_size)


def approx_log_likelihood(inliers: InlierGraph, config: MechanismConfig,
                          cap: int = ENUMERATION_CAP) -> tuple[float, int | None]:
    """Dominant-term log likelihood: log(N*) + |M*| log(1/delta).

    N* counts maximum-cardinality matchings of the inlier graph; when the
    edge count exceeds the enumeration cap the count is skipped (returned as
    None) and only the cardinality term is reported.
    """
    card, _ = max_matching_cardinality(inliers)
    log_inv_delta = math.log(1.0 / config.delta)
    if inliers.n_edges > cap:
        return card * log_inv_delta, None
    matchings = enumerate_matchings(inliers.pairs, cap=cap)
    n_star = sum(1 for m in matchings if len(m) == card)
    return math.log(n_star) + card * log_inv_delta, n_star


def score_pose(graph: AssociationGraph, pose: RelativePose,
               config: MechanismConfig, mechanism: str,
               assignment: ProbabilityAssignment | None = None,
               tol: float = RESIDUAL_TOL) -> HypothesisScore:
    """Score one pose from scratch (residuals, then the chosen mechanism)."""
    if mechanism not in ("cm", "mcm", "hcm"):
        raise ValueError(f"unknown mechanism {mechanism!r}")
    inliers = identify_inliers(graph, pose, config, tol=tol)
    if mechanism == "cm":
        return HypothesisScore("cm", float(cm_score(inliers)), inliers)
    if mechanism == "mcm":
        card, witness = max_matching_cardinality(inliers)
        return HypothesisScore("mcm", float(card), inliers,
                               matching=tuple(witness))
    if assignment is None:
        raise ValueError("harmonic scoring requires a probability assignment")
    w_left, w_right = hcm_weights(inliers, assignment)
    return HypothesisScore("hcm", hcm_score(w_left, w_right, config), inliers,
                           w_left=w_left, w_right=w_right)
