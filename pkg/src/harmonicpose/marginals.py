"""Marginal probability assignment over association edges.

Each edge receives a probability as close as possible (least squares) to a
common reference value, subject to per-vertex budget caps: the probabilities
of a left feature's candidates may sum to at most ``p_x``, and symmetrically
``p_y`` on the right.  The problem is a projection of the constant reference
vector onto the intersection of the box [0, 1]^E with the row/column budget
half-spaces, solved per connected component with Dykstra's alternating
projections (which, unlike plain cyclic projection, converges to the actual
projection).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assoc import AssociationGraph, connected_components


@dataclass(frozen=True)
class AssignmentConfig:
    p_x: float = 0.1
    p_y: float = 0.1
    tolerance: float = 1e-8
    max_iterations: int = 10000

    def __post_init__(self):
        if not 0.0 < self.p_x <= 1.0 or not 0.0 < self.p_y <= 1.0:
            raise ValueError("budgets must lie in (0, 1]")
        if self.tolerance <= 0.0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")


@dataclass(frozen=True)
class ProbabilityAssignment:
    """Per-edge probabilities plus the realized per-vertex totals."""

    probs: np.ndarray
    left_totals: np.ndarray
    right_totals: np.ndarray
    reference: float


class ConvergenceError(RuntimeError):
    """Raised when the projection loop exhausts its iteration budget."""

    def __init__(self, violation: float, iterations: int):
        super().__init__(
            f"assignment did not converge in {iterations} iterations "
            f"(residual {violation:.3e})")
        self.violation = violation
        self.iterations = iterations


def reference_probability(n_left: int, n_right: int, n_edges: int,
                          config: AssignmentConfig) -> float:
    """Common target value (p_x*|S| + p_y*|T|) / |E| / 2."""
    if n_edges <= 0:
        raise ValueError("graph has no edges to assign")
    return (config.p_x * n_left + config.p_y * n_right) / n_edges / 2.0


def _project_groups(x: np.ndarray, groups: list[np.ndarray], budget: float) -> None:
    """Project in place onto {sum over each group <= budget} (groups disjoint)."""
    for g in groups:
        excess = x[g].sum() - budget
        if excess > 0.0:
            x[g] -= excess / len(g)


def _group_violation(x: np.ndarray, groups: list[np.ndarray], budget: float) -> float:
    worst = 0.0
    for g in groups:
        worst = max(worst, x[g].sum() - budget)
    return worst


def _solve_component(m: int, row_groups: list[np.ndarray],
                     col_groups: list[np.ndarray], p_bar: float,
                     config: AssignmentConfig) -> np.ndarray:
    y = np.full(m, p_bar)
    q_box = np.zeros(m)
    q_row = np.zeros(m)
    q_col = np.zeros(m)
    violation = np.inf
    for _ in range(config.max_iterations):
        prev = y.copy()

        z = y + q_box
        y = np.clip(z, 0.0, 1.0)
        q_box = z - y

        z = y + q_row
        y = z.copy()
        _project_groups(y, row_groups, config.p_x)
        q_row = z - y

        z = y + q_col
        y = z.copy()
        _project_groups(y, col_groups, config.p_y)
        q_col = z - y

        violation = max(
            float(np.max(-y, initial=0.0)),
            float(np.max(y - 1.0, initial=0.0)),
            _group_violation(y, row_groups, config.p_x),
            _group_violation(y, col_groups, config.p_y),
        )
        if violation <= config.tolerance and float(np.max(np.abs(y - prev))) <= config.tolerance:
            return y
    raise ConvergenceError(violation, config.max_iterations)


def assign_marginals(graph: AssociationGraph,
                     config: AssignmentConfig) -> ProbabilityAssignment:
    """Solve the uniformity-regularized assignment, one component at a time.

    Components are independent (no constraint couples them), so the
    concatenation of per-component solutions is the global solution.
    """
    if graph.n_edges == 0:
        raise ValueError("graph has no edges to assign")
    p_bar = reference_probability(graph.n_left, graph.n_right,
                                  graph.n_edges, config)
    probs = np.zeros(graph.n_edges)
    for comp in connected_components(graph):
        if not comp.edge_indices:
            continue
        eids = np.array(comp.edge_indices, dtype=int)
        local = {int(k): idx for idx, k in enumerate(eids)}
        row_groups = []
        for i in comp.left_indices:
            ks = [local[k] for k in graph.left_edge_indices(i)]
            if ks:
                row_groups.append(np.array(ks, dtype=int))
        col_groups = []
        for j in comp.right_indices:
            ks = [local[k] for k in graph.right_edge_indices(j)]
            if ks:
                col_groups.append(np.array(ks, dtype=int))
        probs[eids] = _solve_component(len(eids), row_groups, col_groups,
                                       p_bar, config)

    left_totals = np.bincount(graph.edge_i, weights=probs, minlength=graph.n_left)
    right_totals = np.bincount(graph.edge_j, weights=probs, minlength=graph.n_right)
    return ProbabilityAssignment(probs=probs, left_totals=left_totals,
                                 right_totals=right_totals, reference=p_bar)
