"""Bipartite association graphs, mutual-K-NN candidate selection, metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import RelativePose

DEFAULT_MIN_SIMILARITY = 0.7
DEFAULT_EDGE_CAP = 1024

_UNIT_TOL = 1e-9


@dataclass(frozen=True)
class BearingObservation:
    """Unit-length viewing direction of one image feature in its camera frame."""

    direction: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float).reshape(3)
        if abs(np.linalg.norm(d) - 1.0) > _UNIT_TOL:
            raise ValueError("bearing direction is not unit length")
        object.__setattr__(self, "direction", d)


@dataclass(frozen=True)
class Edge:
    """Candidate association between left feature i and right feature j."""

    i: int
    j: int
    similarity: float = 1.0
    prob: float = 0.0

    def __post_init__(self):
        if not -1.0 - 1e-9 <= self.similarity <= 1.0 + 1e-9:
            raise ValueError(f"similarity {self.similarity} outside [-1, 1]")
        if not 0.0 <= self.prob <= 1.0:
            raise ValueError(f"probability {self.prob} outside [0, 1]")

    @property
    def pair(self) -> tuple[int, int]:
        return (self.i, self.j)


def _as_bearing_array(obs, name: str) -> np.ndarray:
    if isinstance(obs, np.ndarray):
        arr = np.asarray(obs, dtype=float)
        if arr.size == 0:
            return arr.reshape(0, 3)
        arr = arr.reshape(-1, 3)
    else:
        rows = [b.direction if isinstance(b, BearingObservation) else np.asarray(b, dtype=float)
                for b in obs]
        arr = np.array(rows, dtype=float).reshape(-1, 3) if rows else np.zeros((0, 3))
    if arr.size and np.max(np.abs(np.linalg.norm(arr, axis=1) - 1.0)) > _UNIT_TOL:
        raise ValueError(f"{name} bearings are not unit length")
    return arr


class AssociationGraph:
    """Immutable bipartite candidate graph over two cameras' features.

    Bearings are stored as (n, 3) unit-row arrays; edges are kept sorted by
    (i, j) so every downstream iteration order is stable.
    """

    def __init__(self, left, right, edges):
        self.left = _as_bearing_array(left, "left")
        self.right = _as_bearing_array(right, "right")
        edges = sorted(edges, key=lambda e: (e.i, e.j))
        seen = set()
        for e in edges:
            if not (0 <= e.i < len(self.left) and 0 <= e.j < len(self.right)):
                raise ValueError(f"edge ({e.i}, {e.j}) out of range")
            if e.pair in seen:
                raise ValueError(f"duplicate edge ({e.i}, {e.j})")
            seen.add(e.pair)
        self.edges: tuple[Edge, ...] = tuple(edges)
        self.edge_i = np.array([e.i for e in edges], dtype=np.int64)
        self.edge_j = np.array([e.j for e in edges], dtype=np.int64)
        self.edge_similarity = np.array([e.similarity for e in edges], dtype=float)
        self.edge_prob = np.array([e.prob for e in edges], dtype=float)
        self._nbr_left: list[list[int]] = [[] for _ in range(len(self.left))]
        self._nbr_right: list[list[int]] = [[] for _ in range(len(self.right))]
        for k, e in enumerate(edges):
            self._nbr_left[e.i].append(k)
            self._nbr_right[e.j].append(k)

    @property
    def n_left(self) -> int:
        return len(self.left)

    @property
    def n_right(self) -> int:
        return len(self.right)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def left_neighbors(self, i: int) -> list[int]:
        """Candidate right features of left feature i."""
        return [self.edges[k].j for k in self._nbr_left[i]]

    def right_neighbors(self, j: int) -> list[int]:
        """Candidate left features of right feature j."""
        return [self.edges[k].i for k in self._nbr_right[j]]

    def left_edge_indices(self, i: int) -> list[int]:
        return list(self._nbr_left[i])

    def right_edge_indices(self, j: int) -> list[int]:
        return list(self._nbr_right[j])

    def with_probs(self, probs: np.ndarray) -> "AssociationGraph":
        """Copy of the graph with per-edge probabilities filled in."""
        probs = np.asarray(probs, dtype=float)
        if probs.shape != (self.n_edges,):
            raise ValueError("probability vector length mismatch")
        new_edges = [Edge(e.i, e.j, e.similarity, float(p))
                     for e, p in zip(self.edges, probs)]
        return AssociationGraph(self.left, self.right, new_edges)

    def pair_set(self) -> set[tuple[int, int]]:
        return {e.pair for e in self.edges}


@dataclass(frozen=True)
class GroundTruth:
    """Reference pose and the set of truly corresponding index pairs."""

    pose: RelativePose | None
    matches: frozenset

    def __post_init__(self):
        matches = frozenset(tuple(m) for m in self.matches)
        left_seen, right_seen = set(), set()
        for i, j in matches:
            if i in left_seen or j in right_seen:
                raise ValueError("ground-truth matches are not a matching")
            left_seen.add(i)
            right_seen.add(j)
        object.__setattr__(self, "matches", matches)


def build_mknn(desc_left: np.ndarray, desc_right: np.ndarray, k: int,
               min_sim: float = DEFAULT_MIN_SIMILARITY,
               cap: int = DEFAULT_EDGE_CAP) -> list[Edge]:
    """Mutual top-K nearest-neighbor candidate edges by cosine similarity.

    An edge (i, j) is kept iff j is among the k most similar right features
    of i, i is among the k most similar left features of j, and the cosine
    similarity is at least ``min_sim``.  Ties at the top-K cut are broken by
    the lower feature index.  If more than ``cap`` edges survive, the lowest
    similarity ones are dropped.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    dl = np.asarray(desc_left, dtype=float)
    dr = np.asarray(desc_right, dtype=float)
    if dl.size == 0 or dr.size == 0:
        return []
    dl = dl.reshape(len(dl), -1)
    dr = dr.reshape(len(dr), -1)
    nl = np.linalg.norm(dl, axis=1)
    nr = np.linalg.norm(dr, axis=1)
    if np.any(nl == 0.0) or np.any(nr == 0.0):
        raise ValueError("zero-norm descriptor")
    sims = (dl / nl[:, None]) @ (dr / nr[:, None]).T

    # Stable argsort on -sim keeps equal-similarity candidates in index
    # order, which realizes the lower-index tie break.
    row_rank = np.argsort(-sims, axis=1, kind="stable")[:, :k]
    col_rank = np.argsort(-sims.T, axis=1, kind="stable")[:, :k]
    in_row = np.zeros_like(sims, dtype=bool)
    in_col = np.zeros_like(sims, dtype=bool)
    np.put_along_axis(in_row, row_rank, True, axis=1)
    np.put_along_axis(in_col.T, col_rank, True, axis=1)
    keep = in_row & in_col & (sims >= min_sim)

    ii, jj = np.nonzero(keep)
    edges = [Edge(int(i), int(j), float(sims[i, j])) for i, j in zip(ii, jj)]
    if len(edges) > cap:
        edges.sort(key=lambda e: (-e.similarity, e.i, e.j))
        edges = edges[:cap]
    edges.sort(key=lambda e: (e.i, e.j))
    return edges


@dataclass(frozen=True)
class Component:
    """One connected piece of an association graph (indices into the parent)."""

    left_indices: tuple[int, ...]
    right_indices: tuple[int, ...]
    edge_indices: tuple[int, ...]


def connected_components(graph: AssociationGraph) -> list[Component]:
    """Vertex-disjoint connected components, isolated vertices included.

    Components are ordered by their smallest left index; right-only
    singletons come last, ordered by right index.
    """
    n_l, n_r = graph.n_left, graph.n_right
    comp_l = np.full(n_l, -1, dtype=int)
    comp_r = np.full(n_r, -1, dtype=int)
    components: list[Component] = []

    for start in range(n_l):
        if comp_l[start] >= 0:
            continue
        cid = len(components)
        lefts, rights, eids = [start], [], []
        comp_l[start] = cid
        stack = [("L", start)]
        while stack:
            side, v = stack.pop()
            if side == "L":
                for k in graph.left_edge_indices(v):
                    eids.append(k)
                    j = graph.edges[k].j
                    if comp_r[j] < 0:
                        comp_r[j] = cid
                        rights.append(j)
                        stack.append(("R", j))
            else:
                for k in graph.right_edge_indices(v):
                    i = graph.edges[k].i
                    if comp_l[i] < 0:
                        comp_l[i] = cid
                        lefts.append(i)
                        stack.append(("L", i))
        # Each edge is appended exactly once, from its left endpoint.
        components.append(Component(tuple(sorted(lefts)), tuple(sorted(rights)),
                                    tuple(sorted(set(eids)))))
    for j in range(n_r):
        if comp_r[j] < 0:
            components.append(Component((), (j,), ()))
    return components


def group_precision(graph: AssociationGraph, gt: GroundTruth,
                    side: str) -> float | None:
    """Fraction of matched features whose candidate set contains the truth.

    Returns None when the chosen side has no ground-truth-matched features.
    """
    if not gt.matches:
        raise ValueError("ground truth has no matches")
    if side not in ("left", "right"):
        raise ValueError("side must be 'left' or 'right'")
    hits = 0
    total = 0
    if side == "left":
        for i, j in gt.matches:
            if 0 <= i < graph.n_left:
                total += 1
                if j in graph.left_neighbors(i):
                    hits += 1
    else:
        for i, j in gt.matches:
            if 0 <= j < graph.n_right:
                total += 1
                if i in graph.right_neighbors(j):
                    hits += 1
    if total == 0:
        return None
    return hits / total


@dataclass(frozen=True)
class AssociationMetrics:
    precision: float
    recall: float
    success: bool
    n_correct: int


def association_metrics(output, gt: GroundTruth,
                        success_threshold: int = 5) -> AssociationMetrics:
    """Precision/recall of an output edge set against ground-truth matches.

    Precision is zero for an empty output; success requires at least
    ``success_threshold`` correct associations.
    """
    pairs = [e.pair if isinstance(e, Edge) else tuple(e) for e in output]
    correct = sum(1 for p in pairs if p in gt.matches)
    precision = correct / len(pairs) if pairs else 0.0
    recall = correct / len(gt.matches) if gt.matches else 0.0
    return AssociationMetrics(precision=precision, recall=recall,
                              success=correct >= success_threshold,
                              n_correct=correct)
