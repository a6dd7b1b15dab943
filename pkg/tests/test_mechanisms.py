import math

import numpy as np
import pytest

from harmonicpose.assoc import AssociationGraph, Edge
from harmonicpose.geometry import RelativePose, exp_so3
from harmonicpose.marginals import (AssignmentConfig, ProbabilityAssignment,
                                    assign_marginals)
from harmonicpose.mechanisms import (InlierGraph, MechanismConfig,
                                     approx_log_likelihood, cm_score,
                                     conditional_likelihood,
                                     enumerate_matchings, exact_likelihood,
                                     hcm_score, hcm_weights, identify_inliers,
                                     max_matching_cardinality, score_pose)

from oracles import brute_force_matchings, brute_force_max_matching


def unit_rows(arr):
    arr = np.asarray(arr, dtype=float)
    return arr / np.linalg.norm(arr, axis=1, keepdims=True)


def graph_from_pairs(pairs, n_left=None, n_right=None, seed=7):
    n_left = n_left if n_left is not None else max(i for i, _ in pairs) + 1
    n_right = n_right if n_right is not None else max(j for _, j in pairs) + 1
    rng = np.random.default_rng(seed)
    return AssociationGraph(unit_rows(rng.normal(size=(n_left, 3))),
                            unit_rows(rng.normal(size=(n_right, 3))),
                            [Edge(i, j) for i, j in pairs])


def inliers_of(graph, pairs):
    wanted = set(pairs)
    idx = tuple(k for k, e in enumerate(graph.edges) if e.pair in wanted)
    assert len(idx) == len(wanted)
    return InlierGraph(graph=graph, edge_indices=idx)


# Three-left, three-right example used repeatedly below: the inlier subset
# {(0,1),(1,0),(1,2)} admits 6 matchings, max cardinality 2 in two ways.
TOY_PAIRS = [(0, 1), (1, 0), (1, 2), (2, 2)]
TOY_INLIERS = [(0, 1), (1, 0), (1, 2)]


def default_config(**kw):
    return MechanismConfig.from_degrees(**kw)


class TestMechanismConfig:
    def test_derived_constants(self):
        c = default_config()
        assert c.delta == pytest.approx(0.03)
        assert c.c_x == pytest.approx(0.1 / 0.9 / 0.03)

    def test_reference_constant_table(self):
        # Budget-probability grid against the likelihood-ratio constants.
        expected = {0.01: 0.34, 0.05: 1.75, 0.1: 3.70, 0.2: 8.33,
                    0.3: 14.29, 0.5: 33.33, 0.7: 77.78}
        for p, c_ref in expected.items():
            c = MechanismConfig.from_degrees(p_x=p, p_y=p)
            assert abs(c.c_x - c_ref) < 0.01

    def test_validation(self):
        with pytest.raises(ValueError):
            MechanismConfig(epsilon=0.2, outlier_range=0.1)
        with pytest.raises(ValueError):
            MechanismConfig(epsilon=0.1, outlier_range=0.2, p_x=1.0)


class TestIdentifyInliers:
    def test_true_pose_keeps_exact_matches(self):
        rng = np.random.default_rng(0)
        R = exp_so3(np.array([0.2, -0.1, 0.3]))
        t = np.array([0.0, 0.0, 1.0])
        pose = RelativePose(R, t)
        lefts, rights, pairs = [], [], []
        for k in range(6):
            p1 = np.array([rng.uniform(-1, 1), rng.uniform(-1, 1),
                           rng.uniform(2, 5)])
            p2 = R.T @ (p1 - t)
            lefts.append(p1 / np.linalg.norm(p1))
            rights.append(p2 / np.linalg.norm(p2))
            pairs.append((k, k))
        g = AssociationGraph(np.array(lefts), np.array(rights),
                             [Edge(i, j) for i, j in pairs])
        inl = identify_inliers(g, pose, default_config())
        assert set(inl.pairs) == set(pairs)

    def test_zero_threshold_empty(self):
        g = graph_from_pairs([(0, 0), (1, 1)])
        pose = RelativePose(np.eye(3), np.array([0.0, 0.0, 1.0]))
        config = MechanismConfig(epsilon=1e-12, outlier_range=0.1)
        inl = identify_inliers(g, pose, config)
        assert inl.n_edges == 0

    def test_membership_matches_per_edge_residual(self):
        from harmonicpose.geometry import angular_residual
        rng = np.random.default_rng(1)
        g = graph_from_pairs([(i, j) for i in range(4) for j in range(4)],
                             seed=3)
        v = rng.normal(size=3)
        pose = RelativePose(exp_so3(v / np.linalg.norm(v)),
                            np.array([0.0, 0.0, 1.0]))
        config = default_config(epsilon_deg=20.0, outlier_range_deg=60.0)
        inl = identify_inliers(g, pose, config)
        member = set(inl.pairs)
        for e in g.edges:
            r = angular_residual(pose, g.left[e.i], g.right[e.j])
            assert (e.pair in member) == (r < config.epsilon)


class TestScores:
    def test_cm_counts(self):
        g = graph_from_pairs(TOY_PAIRS)
        assert cm_score(inliers_of(g, [])) == 0
        assert cm_score(inliers_of(g, TOY_INLIERS)) == 3

    def test_max_matching_toy(self):
        g = graph_from_pairs(TOY_PAIRS)
        card, witness = max_matching_cardinality(inliers_of(g, TOY_INLIERS))
        assert card == 2
        assert len(witness) == 2
        lefts = [i for i, _ in witness]
        rights = [j for _, j in witness]
        assert len(set(lefts)) == 2 and len(set(rights)) == 2

    def test_max_matching_complete_3x3(self):
        pairs = [(i, j) for i in range(3) for j in range(3)]
        g = graph_from_pairs(pairs)
        card, _ = max_matching_cardinality(inliers_of(g, pairs))
        assert card == 3

    def test_max_matching_matches_brute_force(self):
        rng = np.random.default_rng(2)
        for _ in range(300):
            nl, nr = rng.integers(1, 7, size=2)
            possible = [(i, j) for i in range(nl) for j in range(nr)]
            rng.shuffle(possible)
            pairs = sorted(possible[:rng.integers(1, min(16, len(possible)) + 1)])
            g = graph_from_pairs(pairs, nl, nr)
            card, witness = max_matching_cardinality(inliers_of(g, pairs))
            assert card == brute_force_max_matching(pairs)
            assert len(witness) == card

    def test_score_bound_chain(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            nl = nr = 5
            possible = [(i, j) for i in range(nl) for j in range(nr)]
            rng.shuffle(possible)
            pairs = sorted(possible[:rng.integers(1, 13)])
            g = graph_from_pairs(pairs, nl, nr)
            inl = inliers_of(g, pairs)
            card, _ = max_matching_cardinality(inl)
            assert cm_score(inl) >= card >= 0


class TestHcmWeights:
    def make_assignment(self, g, probs):
        probs = np.asarray(probs, dtype=float)
        return ProbabilityAssignment(
            probs=probs,
            left_totals=np.bincount(g.edge_i, weights=probs,
                                    minlength=g.n_left),
            right_totals=np.bincount(g.edge_j, weights=probs,
                                     minlength=g.n_right),
            reference=0.0)

    def test_full_inlier_weight_is_one(self):
        g = graph_from_pairs([(0, 0), (0, 1), (0, 2)])
        a = self.make_assignment(g, [0.1, 0.1, 0.1])
        w_left, _ = hcm_weights(inliers_of(g, [(0, 0), (0, 1), (0, 2)]), a)
        assert w_left[0] == pytest.approx(1.0)

    def test_no_inliers_weight_absent(self):
        g = graph_from_pairs([(0, 0)])
        a = self.make_assignment(g, [0.2])
        w_left, w_right = hcm_weights(inliers_of(g, []), a)
        assert w_left == {} and w_right == {}

    def test_star_partial(self):
        g = graph_from_pairs([(0, 0), (0, 1), (0, 2)])
        a = self.make_assignment(g, [0.1, 0.1, 0.1])
        w_left, w_right = hcm_weights(inliers_of(g, [(0, 1)]), a)
        assert w_left[0] == pytest.approx(1.0 / 3.0)
        assert w_right[1] == pytest.approx(1.0)

    def test_zero_total_rejected(self):
        g = graph_from_pairs([(0, 0)])
        a = self.make_assignment(g, [0.0])
        with pytest.raises(ValueError):
            hcm_weights(inliers_of(g, [(0, 0)]), a)

    def test_weights_in_unit_interval(self):
        rng = np.random.default_rng(4)
        for _ in range(30):
            pairs = sorted({(int(rng.integers(4)), int(rng.integers(4)))
                            for _ in range(8)})
            g = graph_from_pairs(pairs, 4, 4)
            a = assign_marginals(g, AssignmentConfig(p_x=0.3, p_y=0.3))
            subset = [p for p in pairs if rng.random() < 0.5]
            w_left, w_right = hcm_weights(inliers_of(g, subset), a)
            for w in list(w_left.values()) + list(w_right.values()):
                assert -1e-9 <= w <= 1.0 + 1e-9


class TestHcmScore:
    def test_zero_weights(self):
        assert hcm_score({}, {}, default_config()) == 0.0

    def test_single_vertex_full_weight(self):
        config = default_config(p_x=0.1)
        val = hcm_score({0: 1.0}, {}, config)
        assert val == pytest.approx(math.log1p(config.c_x), abs=1e-12)
        # Rounded constant from the reference grid: log(1 + 3.70).
        assert abs(val - 1.5476) < 2e-3

    def test_matches_term_sum(self):
        rng = np.random.default_rng(5)
        config = default_config(p_x=0.23, p_y=0.41)
        for _ in range(50):
            w_left = {i: rng.uniform(0, 1) for i in range(rng.integers(1, 6))}
            w_right = {j: rng.uniform(0, 1) for j in range(rng.integers(1, 6))}
            expected = (sum(math.log(1 + config.c_x * w) for w in w_left.values())
                        + sum(math.log(1 + config.c_y * w) for w in w_right.values()))
            assert hcm_score(w_left, w_right, config) == pytest.approx(
                expected, abs=1e-12)

    def test_monotone_in_inlier_set(self):
        rng = np.random.default_rng(6)
        g = graph_from_pairs([(i, j) for i in range(3) for j in range(3)])
        a = assign_marginals(g, AssignmentConfig(p_x=0.3, p_y=0.3))
        config = default_config()
        pairs = [e.pair for e in g.edges]
        for _ in range(30):
            rng.shuffle(pairs)
            cut = int(rng.integers(0, len(pairs)))
            small = pairs[:cut]
            big = pairs[:cut + 1] if cut < len(pairs) else pairs
            s_small = hcm_score(*hcm_weights(inliers_of(g, small), a), config)
            s_big = hcm_score(*hcm_weights(inliers_of(g, big), a), config)
            assert s_big >= s_small - 1e-12

    def test_symmetry_under_side_swap(self):
        rng = np.random.default_rng(7)
        pairs = sorted({(int(rng.integers(4)), int(rng.integers(4)))
                        for _ in range(9)})
        g = graph_from_pairs(pairs, 4, 4)
        a = assign_marginals(g, AssignmentConfig(p_x=0.2, p_y=0.35))
        sub = [p for p in pairs if rng.random() < 0.6]
        config = MechanismConfig.from_degrees(p_x=0.2, p_y=0.35)
        fwd = hcm_score(*hcm_weights(inliers_of(g, sub), a), config)

        swapped_pairs = sorted((j, i) for i, j in pairs)
        g2 = AssociationGraph(g.right, g.left,
                              [Edge(i, j) for i, j in swapped_pairs])
        a2 = ProbabilityAssignment(
            probs=np.array([a.probs[[e.pair for e in g.edges].index((j, i))]
                            for i, j in swapped_pairs]),
            left_totals=a.right_totals, right_totals=a.left_totals,
            reference=a.reference)
        config2 = MechanismConfig.from_degrees(p_x=0.35, p_y=0.2)
        bwd = hcm_score(*hcm_weights(inliers_of(g2, [(j, i) for i, j in sub]),
                                     a2), config2)
        assert fwd == pytest.approx(bwd, abs=1e-12)


class TestEnumerationAndLikelihood:
    def test_single_edge_matchings(self):
        assert sorted(enumerate_matchings([(0, 0)])) == [(), (0,)]

    def test_toy_max_matching_includes_quoted_configuration(self):
        matchings = enumerate_matchings(TOY_PAIRS)
        as_pairs = [{TOY_PAIRS[k] for k in m} for m in matchings]
        assert {(0, 1), (1, 0), (2, 2)} in as_pairs
        assert max(len(m) for m in matchings) == 3

    def test_count_matches_brute_force(self):
        rng = np.random.default_rng(8)
        for _ in range(40):
            pairs = sorted({(int(rng.integers(4)), int(rng.integers(4)))
                            for _ in range(rng.integers(1, 9))})
            got = enumerate_matchings(pairs)
            assert len(got) == len(brute_force_matchings(pairs))
            assert len({tuple(sorted(m)) for m in got}) == len(got)

    def test_cap_enforced(self):
        with pytest.raises(ValueError):
            enumerate_matchings([(i, i) for i in range(25)], cap=20)

    def test_toy_conditional_likelihood(self):
        # Two real and two wrong associations in a four-edge graph:
        # (1/eps)^2 (delta/eps)^2.
        config = default_config()
        eps, delta = config.epsilon, config.delta
        got = conditional_likelihood(4, 2, config)
        assert got == pytest.approx((1 / eps) ** 2 * (delta / eps) ** 2,
                                    rel=1e-12)

    def test_exact_likelihood_toy_sum(self):
        g = graph_from_pairs(TOY_PAIRS)
        config = default_config()
        inl = inliers_of(g, TOY_INLIERS)
        got = exact_likelihood(g, inl, config)
        # Inlier subgraph has matchings of sizes {0:1, 1:3, 2:2}; the prior
        # is uniform over the 10 matchings of the full graph.
        inv_d = 1.0 / config.delta
        base = (config.epsilon / config.delta) ** (-4)
        expected = base / 10.0 * (1 + 3 * inv_d + 2 * inv_d ** 2)
        assert got == pytest.approx(expected, rel=1e-12)

    def test_exact_likelihood_no_inliers(self):
        g = graph_from_pairs(TOY_PAIRS)
        config = default_config()
        got = exact_likelihood(g, inliers_of(g, []), config)
        expected = (config.epsilon / config.delta) ** (-4) / 10.0
        assert got == pytest.approx(expected, rel=1e-12)

    def test_approx_log_likelihood_toy(self):
        g = graph_from_pairs(TOY_PAIRS)
        config = default_config()
        val, n_star = approx_log_likelihood(inliers_of(g, TOY_INLIERS), config)
        assert n_star == 2
        assert val == pytest.approx(math.log(2)
                                    + 2 * math.log(1 / config.delta))

    def test_approx_log_likelihood_single_edge(self):
        g = graph_from_pairs([(0, 0)])
        config = default_config()
        val, n_star = approx_log_likelihood(inliers_of(g, [(0, 0)]), config)
        assert n_star == 1
        assert val == pytest.approx(math.log(1 / config.delta))

    def test_approx_log_likelihood_substitution(self):
        pairs = [(0, 0), (1, 1), (2, 2)]
        g = graph_from_pairs(pairs)
        config = default_config()  # delta = 0.03
        val, n_star = approx_log_likelihood(inliers_of(g, pairs), config)
        assert n_star == 1
        assert val == pytest.approx(3 * math.log(1 / 0.03), rel=1e-9)

    def test_cap_falls_back_to_cardinality_term(self):
        pairs = [(i, i) for i in range(6)]
        g = graph_from_pairs(pairs)
        config = default_config()
        val, n_star = approx_log_likelihood(inliers_of(g, pairs), config,
                                            cap=4)
        assert n_star is None
        assert val == pytest.approx(6 * math.log(1 / config.delta))

    def test_ranking_follows_cardinality(self):
        # With a tiny inlier chance for spurious associations, likelihood
        # order must match matching-cardinality order.
        rng = np.random.default_rng(9)
        config = MechanismConfig(epsilon=math.radians(0.15),
                                 outlier_range=math.radians(0.15) / 1e-3)
        checked = 0
        while checked < 60:
            pairs = sorted({(int(rng.integers(5)), int(rng.integers(5)))
                            for _ in range(rng.integers(2, 11))})
            g = graph_from_pairs(pairs, 5, 5)
            sub1 = [p for p in pairs if rng.random() < 0.6]
            sub2 = [p for p in pairs if rng.random() < 0.6]
            c1 = brute_force_max_matching(sub1)
            c2 = brute_force_max_matching(sub2)
            if c1 == c2:
                continue
            checked += 1
            l1 = exact_likelihood(g, inliers_of(g, sub1), config)
            l2 = exact_likelihood(g, inliers_of(g, sub2), config)
            assert (l1 > l2) == (c1 > c2)


class TestScorePose:
    def test_requires_assignment_for_harmonic(self):
        g = graph_from_pairs([(0, 0)])
        pose = RelativePose(np.eye(3), np.array([0.0, 0.0, 1.0]))
        with pytest.raises(ValueError):
            score_pose(g, pose, default_config(), "hcm")

    def test_mechanism_tags(self):
        g = graph_from_pairs([(0, 0), (1, 1)])
        pose = RelativePose(np.eye(3), np.array([0.0, 0.0, 1.0]))
        a = assign_marginals(g, AssignmentConfig())
        for mech in ("cm", "mcm", "hcm"):
            s = score_pose(g, pose, default_config(), mech, assignment=a)
            assert s.mechanism == mech
            assert s.score >= 0.0
