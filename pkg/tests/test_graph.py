import numpy as np
import pytest

from drgcf.graph import (
    GraphConstructionError,
    IdMap,
    build_graph,
    normalize,
)


def test_single_edge_graph():
    g = build_graph([(0, 0)], 1, 1)
    assert len(g.neighbor_ids) == 2
    assert g.num_edges == 1
    np.testing.assert_array_equal(g.degrees, [1, 1])
    np.testing.assert_array_equal(g.neighbors(0), [1])
    np.testing.assert_array_equal(g.neighbors(1), [0])


def test_duplicate_pairs_collapse():
    g1 = build_graph([(0, 0)], 1, 1)
    g2 = build_graph([(0, 0), (0, 0)], 1, 1)
    np.testing.assert_array_equal(g1.row_offsets, g2.row_offsets)
    np.testing.assert_array_equal(g1.neighbor_ids, g2.neighbor_ids)
    np.testing.assert_array_equal(g1.degrees, g2.degrees)


def test_two_by_two_degrees():
    g = build_graph([(0, 0), (0, 1), (1, 1)], 2, 2)
    # (u0, u1, i0, i1) incidence hand-count
    np.testing.assert_array_equal(g.degrees, [2, 1, 1, 2])


def test_out_of_range_rejected_with_pair():
    with pytest.raises(GraphConstructionError, match=r"\(1, 5\)"):
        build_graph([(0, 0), (1, 5)], 2, 2)
    with pytest.raises(GraphConstructionError, match=r"\(7, 0\)"):
        build_graph([(7, 0)], 2, 2)


def test_csr_invariants():
    rng = np.random.default_rng(0)
    pairs = {(int(rng.integers(0, 20)), int(rng.integers(0, 30))) for _ in range(200)}
    g = build_graph(sorted(pairs), 20, 30)
    assert g.row_offsets[0] == 0
    assert g.row_offsets[-1] == len(g.neighbor_ids)
    np.testing.assert_array_equal(np.diff(g.row_offsets), g.degrees)
    for v in range(g.num_nodes):
        nbrs = g.neighbors(v)
        assert np.all(np.diff(nbrs) > 0), "sorted and duplicate-free"
        # bipartite: users only link to items and vice versa
        if v < g.num_users:
            assert np.all(nbrs >= g.num_users)
        else:
            assert np.all(nbrs < g.num_users)


def test_order_independence_bit_identical():
    rng = np.random.default_rng(1)
    pairs = [(int(rng.integers(0, 15)), int(rng.integers(0, 10))) for _ in range(120)]
    g1 = build_graph(pairs, 15, 10)
    shuffled = [pairs[k] for k in rng.permutation(len(pairs))]
    g2 = build_graph(shuffled, 15, 10)
    np.testing.assert_array_equal(g1.row_offsets, g2.row_offsets)
    np.testing.assert_array_equal(g1.neighbor_ids, g2.neighbor_ids)
    np.testing.assert_array_equal(g1.degrees, g2.degrees)


class TestNormalize:
    def test_single_edge_value(self):
        adj = normalize(build_graph([(0, 0)], 1, 1))
        np.testing.assert_allclose(adj.edge_values, [1.0, 1.0])

    def test_degree_four_against_one(self):
        g = build_graph([(0, 0), (0, 1), (0, 2), (0, 3)], 1, 4)
        adj = normalize(g)
        nbrs, vals = adj.row(0)
        np.testing.assert_allclose(vals, 0.5)  # 1/(2*1)

    def test_two_by_two_value(self):
        adj = normalize(build_graph([(0, 0), (0, 1), (1, 1)], 2, 2))
        nbrs, vals = adj.row(0)
        # value(u0, i0) = 1/(sqrt(2)*sqrt(1))
        assert nbrs[0] == 2
        np.testing.assert_allclose(vals[0], 1.0 / np.sqrt(2.0), atol=1e-15)

    def test_symmetry_and_range(self):
        rng = np.random.default_rng(2)
        pairs = {(int(rng.integers(0, 12)), int(rng.integers(0, 9))) for _ in range(60)}
        g = build_graph(sorted(pairs), 12, 9)
        adj = normalize(g)
        dense = np.zeros((g.num_nodes, g.num_nodes))
        for v in range(g.num_nodes):
            nbrs, vals = adj.row(v)
            dense[v, nbrs] = vals
        np.testing.assert_allclose(dense, dense.T, atol=0)
        stored = adj.edge_values
        assert np.all(stored > 0) and np.all(stored <= 1.0)

    def test_sqrt_degree_eigencheck(self):
        """A_hat applied to sqrt(d) reproduces sqrt(d) to machine epsilon."""
        rng = np.random.default_rng(3)
        for _ in range(20):
            nu, ni = int(rng.integers(2, 12)), int(rng.integers(2, 12))
            pairs = {(int(rng.integers(0, nu)), int(rng.integers(0, ni))) for _ in range(40)}
            g = build_graph(sorted(pairs), nu, ni)
            adj = normalize(g)
            sd = np.sqrt(g.degrees.astype(float))
            np.testing.assert_allclose(adj.matrix() @ sd, sd, atol=1e-12)

    def test_zero_degree_rows_empty(self):
        g = build_graph([(0, 0)], 3, 3)
        adj = normalize(g)
        for v in (1, 2, 4, 5):
            nbrs, vals = adj.row(v)
            assert len(nbrs) == 0 and len(vals) == 0


def test_idmap_roundtrip(tmp_path):
    pairs = [("alice", "x"), ("bob", "y"), ("alice", "y")]
    idmap = IdMap.from_pairs(pairs)
    assert idmap.num_users == 2 and idmap.num_items == 2
    # sorted raw ids -> order independent
    assert idmap.users == {"alice": 0, "bob": 1}
    encoded = idmap.encode(pairs)
    assert encoded == [(0, 0), (1, 1), (0, 1)]
    p = tmp_path / "idmap.tsv"
    idmap.write(p)
    loaded = IdMap.read(p)
    assert loaded.users == idmap.users and loaded.items == idmap.items
    lines = p.read_text().splitlines()
    assert lines[0] == "alice\t0\tuser"
    assert lines[-1] == "y\t1\titem"
