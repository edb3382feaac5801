import numpy as np
import pytest

from oracles import ref_time_jaccard
from trajmine.clustering import ClusterAssignment
from trajmine.extract import RepresentationSet
from trajmine.metrics import (
    WINDOW_STARTS,
    PairSet,
    access_homogeneity,
    cluster_access_components,
    contextual_similarity,
    metrics_report,
    select_pairs,
    time_jaccard,
)
from trajmine.simulate import AccessInfoGraph, PlayerProfile
from trajmine.world import OFFLINE


def random_cells(rng, n_cells=6, online_prob=0.7):
    """A length-1440 per-minute cell array with offline stretches."""
    out = np.full(1440, OFFLINE, dtype=np.int64)
    m = 0
    while m < 1440:
        run = int(rng.integers(10, 120))
        if rng.random() < online_prob:
            out[m : m + run] = int(rng.integers(0, n_cells))
        m += run
    return out


class TestWindowGrid:
    def test_ninety_five_windows(self):
        assert len(WINDOW_STARTS) == 95
        assert WINDOW_STARTS[0] == 1
        assert WINDOW_STARTS[-1] == 1411
        assert all(b - a == 15 for a, b in zip(WINDOW_STARTS, WINDOW_STARTS[1:]))


class TestTimeJaccard:
    def test_matches_reference_on_random_pairs(self):
        rng = np.random.default_rng(70)
        for _ in range(300):
            a = random_cells(rng)
            b = random_cells(rng)
            assert time_jaccard(a, b) == pytest.approx(
                ref_time_jaccard(a, b), abs=1e-12
            )

    def test_identical_always_online_is_one(self):
        a = np.full(1440, 7, dtype=np.int64)
        assert time_jaccard(a, a.copy()) == pytest.approx(1.0)

    def test_fully_offline_is_zero(self):
        a = np.full(1440, OFFLINE, dtype=np.int64)
        assert time_jaccard(a, a.copy()) == 0.0

    def test_disjoint_cells_is_zero(self):
        a = np.full(1440, 1, dtype=np.int64)
        b = np.full(1440, 2, dtype=np.int64)
        assert time_jaccard(a, b) == 0.0

    def test_halfday_switch_hand_case(self):
        # b shares a's cell for minutes 1..720 then moves away. 47 windows
        # lie fully before the switch (J = 1), one straddles it
        # (J = 1/2), and the remaining 47 are disjoint (J = 0).
        a = np.full(1440, 1, dtype=np.int64)
        b = np.concatenate([np.full(720, 1), np.full(720, 2)]).astype(np.int64)
        assert time_jaccard(a, b) == pytest.approx((47 + 0.5) / 95)

    def test_asymmetric_presence(self):
        # a online only during the first window span with b's cell: every
        # window where a is fully offline has union = {b's cell}, J = 0.
        a = np.full(1440, OFFLINE, dtype=np.int64)
        a[0:30] = 5
        b = np.full(1440, 5, dtype=np.int64)
        # Windows touching minutes 1..30: starts 1 and 16.
        assert time_jaccard(a, b) == pytest.approx(2 / 95)

    def test_symmetry(self):
        rng = np.random.default_rng(71)
        for _ in range(20):
            a, b = random_cells(rng), random_cells(rng)
            assert time_jaccard(a, b) == time_jaccard(b, a)

    def test_shape_validation(self):
        with pytest.raises(ValueError, match="length-1440"):
            time_jaccard(np.zeros(100), np.zeros(1440))


def reps_of(points):
    keys = sorted(points)
    vectors = np.stack([points[k] for k in keys]).astype(np.float32)
    return RepresentationSet(keys=keys, vectors=vectors)


def assignment_of(cluster_members):
    labels = {}
    for cid, members in cluster_members.items():
        for k in members:
            labels[k] = cid
    return ClusterAssignment(labels=labels, epsilon=1.0, min_samples=4, q=0.1)


class TestSelectPairs:
    def two_cluster_setup(self):
        # Cluster 0: four points on a line; cluster 1: five points far away.
        points = {}
        for i in range(4):
            points[(i, 1)] = np.array([float(i), 0.0])
        for i in range(5):
            points[(10 + i, 1)] = np.array([100.0 + 2.0 * i, 0.0])
        reps = reps_of(points)
        asg = assignment_of(
            {
                0: [(i, 1) for i in range(4)],
                1: [(10 + i, 1) for i in range(5)],
            }
        )
        return points, reps, asg

    def test_pair_counts(self):
        _, reps, asg = self.two_cluster_setup()
        pair_set = select_pairs(asg, reps, np.random.default_rng(0))
        assert len(pair_set.pos) == 9
        assert len(pair_set.neg) == 9

    def test_positive_partner_is_nearest_member(self):
        _, reps, asg = self.two_cluster_setup()
        pair_set = select_pairs(asg, reps, np.random.default_rng(0))
        partner = dict(pair_set.pos)
        # Line 0-1-2-3: ends pair inward, the middle tie-breaks below.
        assert partner[(0, 1)] == (1, 1)
        assert partner[(3, 1)] == (2, 1)
        # 100, 102, 104, 106, 108: same structure in cluster 1.
        assert partner[(10, 1)] == (11, 1)
        assert partner[(14, 1)] == (13, 1)

    def test_tie_breaks_toward_smaller_key(self):
        _, reps, asg = self.two_cluster_setup()
        pair_set = select_pairs(asg, reps, np.random.default_rng(0))
        partner = dict(pair_set.pos)
        # (1,1) is exactly 1.0 from both (0,1) and (2,1).
        assert partner[(1, 1)] == (0, 1)
        assert partner[(2, 1)] == (1, 1)

    def test_negatives_come_from_other_clusters(self):
        _, reps, asg = self.two_cluster_setup()
        pair_set = select_pairs(asg, reps, np.random.default_rng(3))
        members = asg.clusters()
        for key, other in pair_set.neg:
            assert asg.labels[key] != asg.labels[other]
            assert other in members[1 - asg.labels[key]]

    def test_single_cluster_warns_and_has_no_negatives(self):
        points = {(i, 1): np.array([float(i), 0.0]) for i in range(4)}
        reps = reps_of(points)
        asg = assignment_of({0: list(points)})
        with pytest.warns(UserWarning, match="fewer than two clusters"):
            pair_set = select_pairs(asg, reps, np.random.default_rng(0))
        assert pair_set.neg == []
        assert len(pair_set.pos) == 4

    def test_singleton_cluster_contributes_no_positives(self):
        points = {(i, 1): np.array([float(i), 0.0]) for i in range(4)}
        points[(99, 1)] = np.array([50.0, 0.0])
        reps = reps_of(points)
        asg = assignment_of({0: [(i, 1) for i in range(4)], 1: [(99, 1)]})
        pair_set = select_pairs(asg, reps, np.random.default_rng(0))
        assert all(key != (99, 1) for key, _ in pair_set.pos)
        # The singleton still cannot be a positive, but negatives from the
        # 4-cluster may point at it.
        assert len(pair_set.pos) == 4

    def test_deterministic_under_seed(self):
        _, reps, asg = self.two_cluster_setup()
        a = select_pairs(asg, reps, np.random.default_rng(5))
        b = select_pairs(asg, reps, np.random.default_rng(5))
        assert a.pos == b.pos and a.neg == b.neg


class TestContextualSimilarity:
    def test_means_over_known_overlaps(self):
        cells = {
            (0, 1): np.full(1440, 1, dtype=np.int64),
            (1, 1): np.full(1440, 1, dtype=np.int64),
            (2, 1): np.full(1440, 2, dtype=np.int64),
        }
        pair_set = PairSet(
            pos=[((0, 1), (1, 1)), ((1, 1), (0, 1))],
            neg=[((0, 1), (2, 1))],
        )
        pos_mean, neg_mean = contextual_similarity(pair_set, cells)
        assert pos_mean == pytest.approx(1.0)
        assert neg_mean == 0.0

    def test_empty_pairs_give_none(self):
        assert contextual_similarity(PairSet(pos=[], neg=[]), {}) == (None, None)


def profile(pid, node, gid=None):
    kind = "benign" if gid is None else "bot"
    return PlayerProfile(
        player_id=pid, kind=kind, group_id=gid, level=10.0, access_node=node
    )


class TestAccessHomogeneity:
    def graph(self):
        # Nodes 0-3 form a connected chain; 4-6 are a triangle; 7 isolated.
        return AccessInfoGraph(
            nodes=tuple(range(8)),
            edges=((0, 1), (1, 2), (2, 3), (4, 5), (5, 6), (4, 6)),
        )

    def test_connected_four_member_cluster_counts_one(self):
        access = self.graph()
        profiles = [profile(i, i, gid=0) for i in range(4)]
        asg = assignment_of({0: [(i, 1) for i in range(4)]})
        assert access_homogeneity(asg, access, profiles) == 1.0

    def test_three_plus_one_counts_two(self):
        access = self.graph()
        profiles = [profile(i, i, gid=0) for i in (0, 1, 2, 7)]
        asg = assignment_of({0: [(i, 1) for i in (0, 1, 2, 7)]})
        assert access_homogeneity(asg, access, profiles) == 2.0

    def test_mean_over_clusters(self):
        access = self.graph()
        profiles = [profile(i, i, gid=0) for i in range(8)]
        asg = assignment_of(
            {0: [(0, 1), (1, 1), (2, 1), (3, 1)], 1: [(4, 1), (5, 1), (7, 1)]}
        )
        # Cluster 0 is connected (1 component); cluster 1 splits 2.
        assert access_homogeneity(asg, access, profiles) == pytest.approx(1.5)

    def test_shared_node_collapses_members(self):
        access = AccessInfoGraph(nodes=(0, 1), edges=())
        profiles = [profile(0, 0), profile(1, 0), profile(2, 1)]
        asg = assignment_of({0: [(0, 1), (1, 1), (2, 1)]})
        # Two players behind one node and a third alone: 2 components.
        assert access_homogeneity(asg, access, profiles) == 2.0

    def test_no_clusters_returns_none(self):
        asg = ClusterAssignment(labels={(0, 1): -1}, epsilon=1.0, min_samples=4)
        assert access_homogeneity(asg, self.graph(), [profile(0, 0)]) is None

    def test_missing_player_rejected(self):
        access = self.graph()
        asg = assignment_of({0: [(0, 1), (99, 1)]})
        with pytest.raises(ValueError, match="player 99 has no access node"):
            access_homogeneity(asg, access, [profile(0, 0)])

    def test_cluster_access_components_direct(self):
        access = self.graph()
        node_of = {i: i for i in range(8)}
        # Connectivity is restricted to the subset: 0 and 3 only connect
        # through 1 and 2, so they must also be present.
        assert cluster_access_components([(0, 1), (3, 2)], access, node_of) == 2
        assert (
            cluster_access_components(
                [(0, 1), (1, 1), (2, 1), (3, 2)], access, node_of
            )
            == 1
        )
        assert cluster_access_components([(0, 1), (4, 1), (7, 1)], access, node_of) == 3


class TestMetricsReport:
    def build(self):
        points = {}
        cells = {}
        for i in range(4):
            points[(i, 1)] = np.array([float(i) * 0.01, 0.0])
            cells[(i, 1)] = np.full(1440, 1, dtype=np.int64)
        for i in range(4):
            points[(10 + i, 1)] = np.array([50.0 + i * 0.01, 0.0])
            cells[(10 + i, 1)] = np.full(1440, 2, dtype=np.int64)
        reps = reps_of(points)
        asg = assignment_of(
            {
                0: [(i, 1) for i in range(4)],
                1: [(10 + i, 1) for i in range(4)],
            }
        )
        access = AccessInfoGraph(
            nodes=tuple(range(8)),
            edges=((0, 1), (1, 2), (2, 3), (4, 5), (5, 6), (6, 7)),
        )
        profiles = [profile(i, i, gid=0) for i in range(4)] + [
            profile(10 + i, 4 + i, gid=1) for i in range(4)
        ]
        return asg, reps, cells, access, profiles

    def test_report_contents(self):
        asg, reps, cells, access, profiles = self.build()
        report = metrics_report(asg, reps, cells, access, profiles, seed=3)
        assert report["q"] == 0.1
        assert report["n_clusters"] == 2
        assert report["detecting_count"] == 8
        assert report["pos_mean"] == pytest.approx(1.0)
        assert report["neg_mean"] == 0.0
        assert report["access_homogeneity"] == 1.0
        assert [c["id"] for c in report["per_cluster"]] == [0, 1]
        first = report["per_cluster"][0]
        assert first["size"] == 4
        assert first["access_components"] == 1
        assert first["pos_jaccard_mean"] == pytest.approx(1.0)
        assert len(first["pairs"]) == 4

    def test_deterministic_for_seed(self):
        asg, reps, cells, access, profiles = self.build()
        a = metrics_report(asg, reps, cells, access, profiles, seed=3)
        b = metrics_report(asg, reps, cells, access, profiles, seed=3)
        assert a == b
