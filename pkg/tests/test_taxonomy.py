from pathlib import Path

import networkx as nx
import numpy as np
import pytest

from conftest import random_dag_edges
from dgpzsl import sparse
from dgpzsl.data import load_edge_list
from dgpzsl.errors import ValidationError
from dgpzsl.taxonomy import (
    ANCESTOR,
    DESCENDANT,
    TaxonomyDag,
    build_dag,
    dense_union,
    graph_stats,
    khop_decompose,
    merge_directions,
)

FIXTURES = Path(__file__).parent / "fixtures"


def bfs_oracle_buckets(dag, K, direction):
    """All-pairs shortest paths from networkx, bucketed by hop count."""
    g = nx.DiGraph()
    g.add_nodes_from(range(dag.n_nodes))
    for c, p in dag.edges:
        if direction == ANCESTOR:
            g.add_edge(c, p)
        else:
            g.add_edge(p, c)
    buckets = [set() for _ in range(K + 1)]
    for i, dists in nx.all_pairs_shortest_path_length(g):
        for j, d in dists.items():
            buckets[min(d, K)].add((i, j))
    return buckets


class TestBuildDag:
    def test_single_edge(self):
        dag = build_dag([("b", "a")])
        assert dag.n_nodes == 2 and dag.n_edges == 1
        assert dag.node_ids == ("b", "a")
        assert dag.edges == ((0, 1),)

    def test_two_cycle(self):
        with pytest.raises(ValidationError, match="cycle"):
            build_dag([("b", "a"), ("a", "b")])

    def test_longer_cycle_reports_sequence(self):
        with pytest.raises(ValidationError, match="cycle detected: .*->.*->.*->"):
            build_dag([("a", "b"), ("b", "c"), ("c", "a"), ("d", "a")])

    def test_self_edge(self):
        with pytest.raises(ValidationError, match="self-edge"):
            build_dag([("a", "a")])

    def test_bad_ids(self):
        with pytest.raises(ValidationError):
            build_dag([("a b", "c")])
        with pytest.raises(ValidationError):
            build_dag([("", "c")])

    def test_duplicates_dropped_first_appearance_order(self):
        dag = build_dag([("x", "y"), ("z", "y"), ("x", "y")])
        assert dag.node_ids == ("x", "y", "z")
        assert dag.n_edges == 2

    def test_multi_parent_allowed(self):
        dag = build_dag([("c", "a"), ("c", "b")])
        assert dag.parents[0] == (1, 2)

    def test_wordnet_sample_counts(self):
        path = FIXTURES / "wordnet_sample.tsv"
        lines = [l.rstrip("\n") for l in path.read_text(encoding="utf-8").splitlines() if not l.startswith("#")]
        unique_edges = set(lines)
        ids = {tok for l in lines for tok in l.split("\t")}
        dag = build_dag(load_edge_list(path))
        assert dag.n_edges == len(unique_edges) == 49
        assert dag.n_nodes == len(ids) == 46


class TestKhop:
    def test_single_node(self):
        dag = TaxonomyDag(("a",), ())
        kh = khop_decompose(dag, 4, ANCESTOR)
        assert len(kh.buckets) == 5
        assert kh.buckets[0] == sparse.identity(1)
        assert all(b.nnz == 0 for b in kh.buckets[1:])

    def test_chain_node0(self, chain6):
        kh = khop_decompose(chain6, 4, ANCESTOR)
        row0 = [sorted(j for i, j, _ in b.triplets() if i == 0) for b in kh.buckets]
        assert row0 == [[0], [1], [2], [3], [4, 5]]

    def test_K_zero_rejected(self, chain6):
        with pytest.raises(ValidationError):
            khop_decompose(chain6, 0, ANCESTOR)

    def test_random_dags_match_bfs_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            n = int(rng.integers(1, 51))
            names, edges = random_dag_edges(rng, n, float(rng.uniform(0.02, 0.3)))
            dag = build_dag(edges, extra_nodes=names)
            K = int(rng.integers(1, 6))
            for direction in (ANCESTOR, DESCENDANT):
                kh = khop_decompose(dag, K, direction)
                expected = bfs_oracle_buckets(dag, K, direction)
                for b, e in zip(kh.buckets, expected):
                    assert b.pattern() == e
                    assert np.all(b.values == 1.0)
            kh_a = khop_decompose(dag, K, ANCESTOR)
            kh_d = khop_decompose(dag, K, DESCENDANT)
            for a, d in zip(kh_a.buckets, kh_d.buckets):
                assert d == sparse.transpose(a)

    def test_buckets_disjoint(self):
        rng = np.random.default_rng(8)
        names, edges = random_dag_edges(rng, 40, 0.1)
        kh = khop_decompose(build_dag(edges, extra_nodes=names), 3, ANCESTOR)
        total = sum(b.nnz for b in kh.buckets)
        assert dense_union(kh).nnz == total

    def test_multi_parent_takes_shortest(self):
        # d -> c -> b -> a and d -> a directly
        dag = build_dag([("d", "c"), ("c", "b"), ("b", "a"), ("d", "a")])
        kh = khop_decompose(dag, 4, ANCESTOR)
        assert (0, 3) in kh.buckets[1].pattern()
        assert (0, 3) not in kh.buckets[3].pattern()


class TestDenseUnion:
    def test_single_node(self):
        dag = TaxonomyDag(("a",), ())
        assert dense_union(khop_decompose(dag, 2, ANCESTOR)) == sparse.identity(1)

    def test_chain_is_upper_triangular_closure(self, chain6):
        union = dense_union(khop_decompose(chain6, 4, ANCESTOR))
        np.testing.assert_array_equal(union.to_dense(), np.triu(np.ones((6, 6))))

    def test_matches_transitive_closure(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            names, edges = random_dag_edges(rng, 30, 0.1)
            dag = build_dag(edges, extra_nodes=names)
            reach = np.eye(dag.n_nodes, dtype=bool)
            for c, p in dag.edges:
                reach[c, p] = True
            for k in range(dag.n_nodes):  # Warshall
                reach |= reach[:, [k]] & reach[[k], :]
            union = dense_union(khop_decompose(dag, 2, ANCESTOR))
            np.testing.assert_array_equal(union.to_dense() > 0, reach)

    def test_both_directions_symmetric(self):
        rng = np.random.default_rng(10)
        names, edges = random_dag_edges(rng, 25, 0.15)
        dag = build_dag(edges, extra_nodes=names)
        a = dense_union(khop_decompose(dag, 3, ANCESTOR))
        d = dense_union(khop_decompose(dag, 3, DESCENDANT))
        both = sparse.binarize(sparse.add(a, d))
        assert both == sparse.transpose(both)

    def test_merge_directions(self):
        rng = np.random.default_rng(11)
        names, edges = random_dag_edges(rng, 25, 0.15)
        dag = build_dag(edges, extra_nodes=names)
        kh_a, kh_d = khop_decompose(dag, 3, ANCESTOR), khop_decompose(dag, 3, DESCENDANT)
        merged = merge_directions(kh_a, kh_d)
        for k, b in enumerate(merged.buckets):
            assert b == sparse.transpose(b)
            assert b.pattern() == kh_a.buckets[k].pattern() | kh_d.buckets[k].pattern()


class TestGraphStats:
    def test_single_node(self):
        dag = TaxonomyDag(("a",), ())
        s = graph_stats(dag, khop_decompose(dag, 4, ANCESTOR))
        assert s.hierarchy_density == 1.0 and s.dense_density == 1.0

    def test_chain(self, chain6):
        s = graph_stats(chain6, khop_decompose(chain6, 4, ANCESTOR))
        assert s.n_nodes == 6 and s.n_edges == 5
        assert s.hierarchy_density == pytest.approx((6 + 5 + 5) / 36, abs=1e-15)
        assert s.dense_density == pytest.approx((6 + 15 + 15) / 36, abs=1e-15)
        assert s.density_ratio == pytest.approx(36 / 16)
