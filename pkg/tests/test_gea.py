import numpy as np
import pytest

from drgcf.dro import edge_affinities, reweight_adjacency, worst_case_distribution
from drgcf.gea import (
    EdgeOverlay,
    GeaConfig,
    apply_overlay,
    build_overlay,
    dro_over_new_distribution,
    node_mixture,
    select_added_neighbor,
)
from drgcf.graph import build_graph, normalize


def _overlay(num_nodes, gamma, **added):
    arr = np.full(num_nodes, -1, dtype=np.int64)
    for node, target in added.items():
        arr[int(node)] = target
    return EdgeOverlay(added=arr, gamma=gamma)


class TestSelect:
    def test_single_candidate_pool(self):
        # u0 interacted with i0; the only other interacted item is i1.
        g = build_graph([(0, 0), (1, 1)], 2, 2)
        E = np.random.default_rng(0).normal(size=(4, 3))
        pick = select_added_neighbor(0, g, E, candidate_size=5,
                                     rng=np.random.default_rng(1))
        assert pick == 3  # the item node of i1

    def test_argmin_affinity_is_max_cosine(self):
        # u0 with 3 non-neighbor candidate items at cosines (0.9, 0.1, -0.5).
        g = build_graph([(0, 0), (1, 1), (1, 2), (1, 3)], 2, 4)
        E = np.zeros((6, 2))
        E[0] = [1.0, 0.0]          # u0
        E[2] = [1.0, 0.0]          # i0: the existing neighbor
        E[3] = [0.9, np.sqrt(1 - 0.81)]
        E[4] = [0.1, np.sqrt(1 - 0.01)]
        E[5] = [-0.5, np.sqrt(1 - 0.25)]
        pick = select_added_neighbor(0, g, E, candidate_size=3,
                                     rng=np.random.default_rng(2))
        assert pick == 3  # cosine 0.9 candidate

    def test_tie_breaks_to_lowest_id(self):
        g = build_graph([(0, 0), (1, 1), (1, 2)], 2, 3)
        E = np.zeros((5, 2))
        E[0] = [1.0, 0.0]
        E[3] = [0.5, 0.5]  # i1
        E[4] = [0.5, 0.5]  # i2: identical embedding and degree -> identical g
        pick = select_added_neighbor(0, g, E, candidate_size=2,
                                     rng=np.random.default_rng(3))
        assert pick == 3

    def test_no_candidates_signalled(self):
        # Single user, single item, already connected.
        g = build_graph([(0, 0)], 1, 1)
        E = np.ones((2, 2))
        assert select_added_neighbor(0, g, E, 4, np.random.default_rng(0)) is None

    def test_zero_degree_candidates_excluded(self):
        # i1 exists but has no interactions; only i2 is eligible.
        g = build_graph([(0, 0), (1, 2)], 2, 3)
        E = np.random.default_rng(4).normal(size=(5, 2))
        for seed in range(5):
            pick = select_added_neighbor(0, g, E, 3, np.random.default_rng(seed))
            assert pick == 4  # node of i2, never the isolated i1 (node 3)


class TestBuildOverlay:
    def test_reproducible_and_opposite_side(self):
        rng = np.random.default_rng(5)
        pairs = sorted({(int(rng.integers(0, 8)), int(rng.integers(0, 8))) for _ in range(30)})
        g = build_graph(pairs, 8, 8)
        E = rng.normal(size=(16, 4))
        cfg = GeaConfig(gamma=0.5, candidate_size=4)
        o1 = build_overlay(g, E, cfg, np.random.default_rng(42))
        o2 = build_overlay(g, E, cfg, np.random.default_rng(42))
        np.testing.assert_array_equal(o1.added, o2.added)
        for node in range(g.num_nodes):
            target = o1.added[node]
            if target < 0:
                continue
            assert g.is_user(node) != g.is_user(target)
            assert not g.has_edge(node, int(target))

    def test_gamma_one_empty(self):
        g = build_graph([(0, 0), (1, 1)], 2, 2)
        E = np.ones((4, 2))
        o = build_overlay(g, E, GeaConfig(gamma=1.0), np.random.default_rng(0))
        assert o.added_count() == 0


class TestApplyOverlay:
    def test_gamma_one_returns_input(self):
        adj = normalize(build_graph([(0, 0)], 1, 1))
        o = _overlay(2, 1.0)
        assert apply_overlay(adj, o) is adj

    def test_single_edge_example(self):
        # u0-i0 plus overlay on i1 (degree 1 via u1), gamma = 0.8.
        g = build_graph([(0, 0), (1, 1)], 2, 2)
        adj = normalize(g)
        mixed = apply_overlay(adj, _overlay(4, 0.8, **{"0": 3}))
        nbrs, vals = mixed.row(0)
        np.testing.assert_array_equal(nbrs, [2, 3])
        np.testing.assert_allclose(vals, [0.8, 0.2], atol=1e-15)
        # Untouched rows keep their values.
        _, v1 = mixed.row(1)
        np.testing.assert_allclose(v1, 1.0)

    def test_existing_edge_rejected(self):
        g = build_graph([(0, 0)], 1, 1)
        adj = normalize(g)
        with pytest.raises(ValueError, match="existing edge"):
            apply_overlay(adj, _overlay(2, 0.5, **{"0": 1}))

    def test_induced_distribution_is_mixture(self):
        rng = np.random.default_rng(6)
        pairs = sorted({(int(rng.integers(0, 6)), int(rng.integers(0, 6))) for _ in range(18)})
        g = build_graph(pairs, 6, 6)
        adj = normalize(g)
        E = rng.normal(size=(12, 3))
        overlay = build_overlay(g, E, GeaConfig(gamma=0.6, candidate_size=3),
                                np.random.default_rng(1))
        mixed = apply_overlay(adj, overlay)
        d = g.degrees.astype(float)
        for u in range(g.num_nodes):
            nbrs, vals = mixed.row(u)
            if len(nbrs) == 0:
                continue
            probs = vals * np.sqrt(d[nbrs]) / np.sqrt(d[u])
            assert probs.sum() == pytest.approx(1.0, abs=1e-12)
            target = overlay.added[u]
            if target >= 0:
                # support strictly contains the original neighbors
                assert set(g.neighbors(u)) < set(nbrs)
                k = int(np.searchsorted(nbrs, target))
                assert probs[k] == pytest.approx(0.4, abs=1e-12)

    def test_degrees_frozen(self):
        g = build_graph([(0, 0), (1, 1)], 2, 2)
        adj = normalize(g)
        mixed = apply_overlay(adj, _overlay(4, 0.7, **{"0": 3}))
        np.testing.assert_array_equal(mixed.degrees, g.degrees)
        # row got one extra stored entry even though the degree is unchanged
        assert mixed.row_offsets[1] - mixed.row_offsets[0] == g.degrees[0] + 1


class TestDroOverNewDistribution:
    def test_no_overlay_matches_plain(self):
        g = build_graph([(0, 0), (0, 1), (1, 1)], 2, 2)
        aff = np.array([0.3, -0.2])
        plain = worst_case_distribution(np.ones(2) / 2, aff, 0.5)
        via_gea = dro_over_new_distribution(g, _overlay(4, 0.7), 0, aff, 0.5)
        np.testing.assert_allclose(via_gea, plain, rtol=1e-12)

    def test_gamma_one_matches_plain(self):
        g = build_graph([(0, 0), (0, 1), (1, 1)], 2, 2)
        aff = np.array([0.3, -0.2])
        plain = worst_case_distribution(np.ones(2) / 2, aff, 0.5)
        via_gea = dro_over_new_distribution(g, _overlay(4, 1.0, **{"0": 3}), 0, aff, 0.5)
        np.testing.assert_allclose(via_gea, plain, rtol=1e-12)

    def test_mixture_example(self):
        # uniform over 2 neighbors + 0.3 mass on a third; g = (0, 0, 1), alpha 1.
        g = build_graph([(0, 0), (0, 1), (1, 2)], 2, 3)
        overlay = _overlay(5, 0.7, **{"0": 4})
        support, probs = node_mixture(g, overlay, 0)
        np.testing.assert_array_equal(support, [2, 3, 4])
        np.testing.assert_allclose(probs, [0.35, 0.35, 0.3])
        p = dro_over_new_distribution(g, overlay, 0, np.array([0.0, 0.0, 1.0]), 1.0)
        want = np.array([0.35, 0.35, 0.3 * np.e])
        want /= want.sum()
        np.testing.assert_allclose(p, want, rtol=1e-12)


def test_reweight_over_mixed_base_bridge():
    """Reweighting an overlaid adjacency tilts the mixture, not the uniform."""
    rng = np.random.default_rng(7)
    pairs = sorted({(int(rng.integers(0, 5)), int(rng.integers(0, 5))) for _ in range(14)})
    g = build_graph(pairs, 5, 5)
    adj = normalize(g)
    E = rng.normal(size=(10, 3))
    overlay = build_overlay(g, E, GeaConfig(gamma=0.5, candidate_size=3),
                            np.random.default_rng(2))
    mixed = apply_overlay(adj, overlay)
    alpha = 0.4
    rw = reweight_adjacency(mixed, E, alpha)
    aff = edge_affinities(mixed, E)
    out = rw.matrix() @ E
    d = g.degrees.astype(float)
    for u in range(g.num_nodes):
        nbrs, vals = mixed.row(u)
        if len(nbrs) == 0:
            continue
        base = vals * np.sqrt(d[nbrs]) / np.sqrt(d[u])
        gg = aff[mixed.row_offsets[u] : mixed.row_offsets[u + 1]]
        p = worst_case_distribution(base, gg, alpha)
        ref = np.sqrt(d[u]) * np.sum(p[:, None] * E[nbrs] / np.sqrt(d[nbrs])[:, None], axis=0)
        np.testing.assert_allclose(out[u], ref, atol=1e-10)


def test_gea_config_validation():
    with pytest.raises(ValueError):
        GeaConfig(gamma=0.0)
    with pytest.raises(ValueError):
        GeaConfig(gamma=1.2)
    with pytest.raises(ValueError):
        GeaConfig(candidate_size=0)
    with pytest.raises(ValueError):
        GeaConfig(refresh_period=0)
