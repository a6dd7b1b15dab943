import numpy as np
import pytest

from harmonicpose.assoc import AssociationGraph, Edge
from harmonicpose.marginals import (AssignmentConfig, ConvergenceError,
                                    ProbabilityAssignment, assign_marginals,
                                    reference_probability)

from oracles import active_set_qp


def unit_rows(arr):
    arr = np.asarray(arr, dtype=float)
    return arr / np.linalg.norm(arr, axis=1, keepdims=True)


def graph_from_pairs(pairs, n_left=None, n_right=None):
    n_left = n_left if n_left is not None else max(i for i, _ in pairs) + 1
    n_right = n_right if n_right is not None else max(j for _, j in pairs) + 1
    rng = np.random.default_rng(123)
    return AssociationGraph(unit_rows(rng.normal(size=(n_left, 3))),
                            unit_rows(rng.normal(size=(n_right, 3))),
                            [Edge(i, j) for i, j in pairs])


def random_graph(rng, max_left=4, max_right=4, max_edges=12):
    nl = int(rng.integers(1, max_left + 1))
    nr = int(rng.integers(1, max_right + 1))
    possible = [(i, j) for i in range(nl) for j in range(nr)]
    rng.shuffle(possible)
    n_edges = int(rng.integers(1, min(max_edges, len(possible)) + 1))
    return graph_from_pairs(sorted(possible[:n_edges]), nl, nr)


def objective(probs, p_bar):
    return float(np.sum((probs - p_bar) ** 2))


class TestReferenceProbability:
    def test_single_edge(self):
        config = AssignmentConfig(p_x=0.5, p_y=0.5)
        assert reference_probability(1, 1, 1, config) == pytest.approx(0.5)

    def test_star(self):
        config = AssignmentConfig(p_x=0.3, p_y=0.3)
        assert reference_probability(1, 3, 3, config) == pytest.approx(0.2)

    def test_formula(self):
        config = AssignmentConfig(p_x=0.25, p_y=0.4)
        assert reference_probability(5, 7, 11, config) == pytest.approx(
            (0.25 * 5 + 0.4 * 7) / 11 / 2)

    def test_no_edges_rejected(self):
        with pytest.raises(ValueError):
            reference_probability(2, 2, 0, AssignmentConfig())


class TestAssignMarginals:
    def test_single_edge_interior(self):
        g = graph_from_pairs([(0, 0)])
        a = assign_marginals(g, AssignmentConfig(p_x=0.5, p_y=0.5))
        # Reference 0.5 is feasible, so it is the optimum.
        assert a.probs[0] == pytest.approx(0.5, abs=1e-8)

    def test_star_equal_split(self):
        g = graph_from_pairs([(0, 0), (0, 1), (0, 2)])
        a = assign_marginals(g, AssignmentConfig(p_x=0.3, p_y=0.3))
        # Row budget binds at 0.3; symmetry forces an equal split.
        assert a.reference == pytest.approx(0.2)
        assert np.allclose(a.probs, 0.1, atol=1e-7)
        assert a.left_totals[0] == pytest.approx(0.3, abs=1e-7)

    def test_all_slack_returns_reference(self):
        # Four-cycle: reference (2 + 2)/8 = 0.5 = 1/maxdegree, so the
        # unconstrained optimum is feasible and nothing moves.
        g = graph_from_pairs([(0, 0), (0, 1), (1, 0), (1, 1)])
        config = AssignmentConfig(p_x=1.0, p_y=1.0)
        a = assign_marginals(g, config)
        assert a.reference == pytest.approx(0.5)
        assert np.allclose(a.probs, a.reference, atol=1e-8)

    def test_feasibility(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            g = random_graph(rng)
            px, py = rng.uniform(0.05, 0.9, size=2)
            a = assign_marginals(g, AssignmentConfig(p_x=float(px), p_y=float(py)))
            assert np.all(a.probs >= -1e-8) and np.all(a.probs <= 1.0 + 1e-8)
            assert np.all(a.left_totals <= px + 1e-7)
            assert np.all(a.right_totals <= py + 1e-7)

    def test_matches_active_set_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(40):
            g = random_graph(rng)
            px, py = rng.uniform(0.1, 0.9, size=2)
            config = AssignmentConfig(p_x=float(px), p_y=float(py))
            a = assign_marginals(g, config)
            pairs = [(e.i, e.j) for e in g.edges]
            expected = active_set_qp(pairs, a.reference, px, py)
            assert objective(a.probs, a.reference) == pytest.approx(
                objective(expected, a.reference), abs=1e-6)

    def test_scale_invariance(self):
        rng = np.random.default_rng(2)
        for _ in range(25):
            g = random_graph(rng)
            base = assign_marginals(g, AssignmentConfig(p_x=0.2, p_y=0.25))
            for k in (0.5, 2.0):
                scaled = assign_marginals(
                    g, AssignmentConfig(p_x=0.2 * k, p_y=0.25 * k))
                if np.max(scaled.probs) > 1.0 - 1e-6 or np.max(base.probs) > 1.0 - 1e-6:
                    continue  # box saturation breaks proportionality
                assert np.allclose(scaled.probs, k * base.probs, atol=1e-6)

    def test_component_independence(self):
        g = graph_from_pairs([(0, 0), (0, 1), (1, 2), (2, 3), (2, 4), (3, 4)],
                             n_left=4, n_right=5)
        config = AssignmentConfig(p_x=0.3, p_y=0.4)
        whole = assign_marginals(g, config)
        # Re-solve each component as its own graph; the reference value of
        # the whole graph must be used for the comparison to make sense.
        from harmonicpose.assoc import connected_components
        from harmonicpose.marginals import _solve_component
        for comp in connected_components(g):
            if not comp.edge_indices:
                continue
            eids = np.array(comp.edge_indices)
            local = {int(k): idx for idx, k in enumerate(eids)}
            rows = [np.array([local[k] for k in g.left_edge_indices(i)])
                    for i in comp.left_indices]
            cols = [np.array([local[k] for k in g.right_edge_indices(j)])
                    for j in comp.right_indices]
            alone = _solve_component(len(eids), rows, cols, whole.reference,
                                     config)
            assert np.allclose(alone, whole.probs[eids], atol=1e-7)

    def test_totals_are_sums(self):
        rng = np.random.default_rng(3)
        g = random_graph(rng)
        a = assign_marginals(g, AssignmentConfig())
        for i in range(g.n_left):
            s = sum(a.probs[k] for k in g.left_edge_indices(i))
            assert a.left_totals[i] == pytest.approx(s)

    def test_empty_graph_rejected(self):
        g = AssociationGraph(np.array([[0.0, 0, 1]]), np.array([[0.0, 0, 1]]), [])
        with pytest.raises(ValueError):
            assign_marginals(g, AssignmentConfig())

    def test_non_convergence_reports_violation(self):
        # Coupled rows and columns keep the projections moving for a few
        # cycles, so a budget of 4 is not enough at this tolerance.
        g = graph_from_pairs([(0, 0), (0, 1), (0, 2), (1, 1), (1, 2),
                              (3, 0), (3, 2)], n_left=4, n_right=3)
        with pytest.raises(ConvergenceError) as info:
            assign_marginals(g, AssignmentConfig(p_x=0.16, p_y=0.127,
                                                 tolerance=1e-12,
                                                 max_iterations=4))
        assert info.value.violation >= 0.0


class TestConfigValidation:
    def test_budget_range(self):
        with pytest.raises(ValueError):
            AssignmentConfig(p_x=0.0)
        with pytest.raises(ValueError):
            AssignmentConfig(p_y=1.5)

    def test_tolerance_positive(self):
        with pytest.raises(ValueError):
            AssignmentConfig(tolerance=0.0)
