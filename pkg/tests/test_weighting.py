import math

import numpy as np
import pytest

from relkmeans import FeatureId, Table, gyo_reduce, tables_to_schema
from relkmeans.weighting import (
    RingStats,
    WeightConfig,
    WeightedCoreset,
    compute_weights,
    nearest_center,
    ring_sample_size,
)

from conftest import brute_force_join


def single_table_db(values):
    rows = np.asarray(values, dtype=float).reshape(len(values), -1)
    feats = tuple(FeatureId(f"x{i}", i) for i in range(rows.shape[1]))
    t = Table(0, "T", feats, rows)
    return [t], gyo_reduce(tables_to_schema([t]))


@pytest.fixture
def two_cluster_db(rng):
    half = 16
    a = np.sort(rng.uniform(0, 4, size=half))
    b = np.sort(rng.uniform(100, 104, size=half))
    return single_table_db(np.concatenate([a, b])) + (np.concatenate([a, b]),)


class TestNearestCenter:
    def test_point_at_center(self):
        cs = np.array([[0.0, 0.0], [3.0, 4.0]])
        assert nearest_center(np.array([3.0, 4.0]), cs) == 1

    def test_tie_goes_to_lowest_index(self):
        cs = np.array([[0.0], [2.0]])
        assert nearest_center(np.array([1.0]), cs) == 0

    def test_matches_brute_force(self, rng):
        cs = rng.normal(size=(6, 3))
        for _ in range(50):
            p = rng.normal(size=3)
            d2 = ((cs - p) ** 2).sum(axis=1)
            assert nearest_center(p, cs) == int(np.argmin(d2))


class TestConfig:
    def test_delta_defaults_to_half_epsilon(self):
        cfg = WeightConfig(epsilon=0.15)
        assert cfg.ball_slack == pytest.approx(0.075)

    def test_rejects_bad_parameters(self):
        with pytest.raises(ValueError):
            WeightConfig(epsilon=0.3)
        with pytest.raises(ValueError):
            WeightConfig(epsilon=0.1, delta=0.2)
        with pytest.raises(ValueError):
            WeightConfig(tau=10)

    def test_sample_size_formula_and_cap(self, caplog):
        cfg = WeightConfig(epsilon=0.1, tau=30)
        want = math.ceil(30 / 0.01 * 4 * math.log2(64) ** 2)
        assert ring_sample_size(cfg, 2, 64) == want
        capped = WeightConfig(epsilon=0.1, max_ring_samples=1000)
        assert ring_sample_size(capped, 2, 64) == 1000


class TestComputeWeights:
    def test_single_center_total_near_n(self):
        n = 64
        tables, tree = single_table_db(np.arange(n, dtype=float))
        cfg = WeightConfig(epsilon=0.2, seed=3)
        coreset, stats = compute_weights(tree, tables, [np.array([0.0])], cfg)
        total = coreset.weights.sum()
        delta, eps = cfg.ball_slack, cfg.epsilon
        assert (1 - delta) * n <= total + 1 <= (1 + delta) * (1 + eps) * n + 1
        assert all(s.ratio == 1.0 for s in stats if s.samples > 0)

    def test_two_separated_clusters_split_evenly(self, two_cluster_db):
        tables, tree, values = two_cluster_db
        n = len(values)
        centers = [np.array([values[3]]), np.array([values[20]])]
        cfg = WeightConfig(epsilon=0.2, seed=11)
        coreset, _ = compute_weights(tree, tables, centers, cfg)
        slack = 2 * cfg.epsilon + cfg.ball_slack
        for w in coreset.weights:
            assert (1 - slack) * n / 2 <= w + 1 <= (1 + slack) * n / 2 + 1

    def test_duplicate_center_aliasing(self):
        tables, tree = single_table_db(np.arange(16, dtype=float))
        c = np.array([3.0])
        coreset, _ = compute_weights(
            tree, tables, [c, c.copy(), np.array([9.0])],
            WeightConfig(epsilon=0.2, seed=5, max_ring_samples=2000))
        assert coreset.alias == {0: 0, 1: 0, 2: 2}
        assert coreset.weights[1] == 0.0
        assert coreset.weights[0] > 0.0

    def test_deterministic_given_seed(self):
        tables, tree = single_table_db(np.arange(32, dtype=float))
        centers = [np.array([2.0]), np.array([25.0])]
        cfg = WeightConfig(epsilon=0.2, seed=7, max_ring_samples=3000)
        a, stats_a = compute_weights(tree, tables, centers, cfg)
        b, stats_b = compute_weights(tree, tables, centers, cfg)
        assert np.array_equal(a.weights, b.weights)
        assert stats_a == stats_b

    def test_ring_estimates_track_true_fractions(self, two_cluster_db):
        # wherever the true donut fraction is comfortably above threshold,
        # the sampled ratio lands within epsilon of it
        tables, tree, values = two_cluster_db
        n = len(values)
        centers = np.array([[values[3]], [values[20]]])
        cfg = WeightConfig(epsilon=0.2, seed=13)
        _, stats = compute_weights(tree, tables, centers, cfg)
        pts = brute_force_join(tables)
        threshold = 1 / (2 * len(centers) ** 2 * math.log2(n))
        checked = 0
        by_center: dict[int, float] = {}
        for s in stats:
            prev = by_center.get(s.center_index, 0.0)
            d2 = ((pts - centers[s.center_index]) ** 2).sum(axis=1)
            in_donut = (d2 > prev) & (d2 <= s.sq_radius)
            by_center[s.center_index] = s.sq_radius
            if not in_donut.any() or s.samples == 0:
                continue
            donut_pts = pts[in_donut]
            owners = np.array([nearest_center(p, centers) for p in donut_pts])
            f_true = float((owners == s.center_index).mean())
            if f_true > (1 + cfg.epsilon) * threshold:
                assert abs(s.ratio - f_true) <= cfg.epsilon * max(f_true, 1e-9)
                checked += 1
        assert checked >= 4

    def test_rejects_tiny_join(self):
        tables, tree = single_table_db([0.0])
        with pytest.raises(ValueError, match="at least 2"):
            compute_weights(tree, tables, [np.array([0.0])],
                            WeightConfig(epsilon=0.2))
