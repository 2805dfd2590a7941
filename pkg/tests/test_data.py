import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heihnn.data import (DataFormatError, attach_isolated, knn_hypergraph, load_dataset,
                         load_dataset_dir, majority_baseline, neighbor_hypergraph, parse_features,
                         parse_hypergraph, parse_labels, parse_manifest, split_indices,
                         synth_generate, write_dataset)
from heihnn.hypergraph import HypergraphError, structure_stats


class TestNeighborHypergraph:
    def test_empty_graph(self):
        h = neighbor_hypergraph([], 4)
        assert h.edges == ((0,), (1,), (2,), (3,))

    def test_triangle_dedups(self):
        h = neighbor_hypergraph([(0, 1), (1, 2), (2, 0)], 3)
        assert h.m == 1 and h.edges == ((0, 1, 2),)

    def test_path(self):
        h = neighbor_hypergraph([(0, 1), (1, 2)], 3)
        assert h.edges == ((0, 1), (0, 1, 2), (1, 2))

    def test_two_hops(self):
        h = neighbor_hypergraph([(0, 1), (1, 2), (2, 3)], 4, hops=2)
        assert h.edges == ((0, 1, 2), (0, 1, 2, 3), (1, 2, 3))

    def test_out_of_range(self):
        with pytest.raises(HypergraphError, match="endpoint 5"):
            neighbor_hypergraph([(0, 5)], 3)

    def test_self_loops_and_duplicates_ignored(self):
        h = neighbor_hypergraph([(0, 0), (0, 1), (1, 0)], 2)
        assert h.edges == ((0, 1),)

    def test_every_node_in_own_edge(self):
        rng = np.random.default_rng(0)
        n = 40
        pairs = [tuple(map(int, rng.integers(0, n, 2))) for _ in range(60)]
        nbrs = {v: {v} for v in range(n)}
        for u, v in pairs:
            nbrs[u].add(v)
            nbrs[v].add(u)
        edges = {frozenset(e) for e in neighbor_hypergraph(pairs, n).edges}
        for v in range(n):
            assert frozenset(nbrs[v]) in edges


class TestKnnHypergraph:
    def test_full(self):
        x = np.random.default_rng(1).normal(size=(5, 2))
        assert all(e == (0, 1, 2, 3, 4) for e in knn_hypergraph(x, 5).edges)

    def test_collinear(self):
        h = knn_hypergraph([[0.0], [1.0], [10.0]], 2)
        assert h.edges == ((0, 1), (0, 1), (1, 2))

    def test_tie_to_lower_id(self):
        h = knn_hypergraph([[0.0], [-1.0], [1.0]], 2)
        assert h.edges[0] == (0, 1)

    def test_sizes(self):
        h = knn_hypergraph(np.random.default_rng(2).normal(size=(30, 3)), 5)
        assert h.m == h.n == 30
        assert structure_stats(h)["max_e"] == 5
        assert np.all(h.edge_degrees == 5)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 8))
    def test_nonmembers_are_farther(self, seed, k):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(k, 60))
        x = rng.normal(size=(n, 3))
        h = knn_hypergraph(x, k)
        dist = np.linalg.norm(x[:, None] - x[None], axis=2)
        for v, e in enumerate(h.edges):
            members = [u for u in e if u != v]
            far = max(dist[v, u] for u in members)
            others = [u for u in range(n) if u not in e]
            assert all(dist[v, u] >= far - 1e-9 for u in others)

    def test_cosine_metric(self):
        h = knn_hypergraph([[1.0, 0.0], [10.0, 0.5], [0.0, 1.0]], 2, metric="cosine")
        assert h.edges[0] == (0, 1)

    def test_k_out_of_range(self):
        with pytest.raises(ValueError):
            knn_hypergraph(np.zeros((3, 2)), 1)
        with pytest.raises(ValueError):
            knn_hypergraph(np.zeros((3, 2)), 4)


class TestSynth:
    def test_default_benchmark(self):
        ds = synth_generate()
        assert (ds.hypergraph.n, ds.hypergraph.m) == (200, 120)
        assert ds.n_classes == 4
        assert majority_baseline(ds.labels) == 0.25

    def test_deterministic(self):
        a, b = synth_generate(seed=11), synth_generate(seed=11)
        np.testing.assert_array_equal(a.features, b.features)
        assert a.hypergraph.edges == b.hypergraph.edges

    def test_noise_free_points_coincide(self):
        ds = synth_generate(feature_noise=0.0)
        for c in range(4):
            rows = ds.features[ds.labels == c]
            assert np.all(rows == rows[0])

    def test_homophily_one_is_pure(self):
        ds = synth_generate(homophily=1.0)
        for e in ds.hypergraph.edges:
            assert len(set(ds.labels[list(e)])) == 1

    def test_outliers_add_cross_class_members(self):
        clean = synth_generate(homophily=1.0)
        dirty = synth_generate(homophily=1.0, outlier_rate=1.0)
        mixed = sum(len(set(dirty.labels[list(e)])) > 1 for e in dirty.hypergraph.edges)
        assert mixed > 0.9 * dirty.hypergraph.m
        assert all(len(set(clean.labels[list(e)])) == 1 for e in clean.hypergraph.edges)

    def test_infeasible(self):
        with pytest.raises(ValueError):
            synth_generate(edge_size=60)
        with pytest.raises(ValueError):
            synth_generate(homophily=1.5)
        with pytest.raises(ValueError):
            synth_generate(classes=1)


class TestSplit:
    def test_partition(self):
        labels = np.arange(50) % 5
        train, test = split_indices(50, 3, labels)
        assert len(train) == 40 and len(test) == 10
        assert not set(train) & set(test)
        np.testing.assert_array_equal(np.sort(np.concatenate([train, test])), np.arange(50))

    def test_missing_class_rejected(self):
        labels = np.zeros(10, dtype=int)
        labels[0] = 1
        seeds = [s for s in range(50) if 0 not in split_indices(10, s)[0]]
        with pytest.raises(ValueError, match="class 1"):
            split_indices(10, seeds[0], labels)

    def test_resplit_changes_split_only(self):
        ds = synth_generate()
        other = ds.resplit(99)
        assert other.hypergraph is ds.hypergraph
        assert not np.array_equal(other.train_idx, ds.train_idx)


class TestParsing:
    def test_hypergraph_with_comments(self):
        n, edges = parse_hypergraph("# toy\n3 2\n0 1\n# middle\n1 2\n")
        assert n == 3 and edges == [[0, 1], [1, 2]]

    def test_empty_hyperedge_names_line(self):
        with pytest.raises(DataFormatError, match="line 3: empty hyperedge"):
            parse_hypergraph("3 2\n0 1\n\n1 2\n")

    def test_edge_count_mismatch(self):
        with pytest.raises(DataFormatError, match="declares 3"):
            parse_hypergraph("3 3\n0 1\n1 2\n")

    def test_bad_integer_names_line(self):
        with pytest.raises(DataFormatError, match="line 2"):
            parse_hypergraph("3 1\n0 x\n")

    def test_crlf(self):
        assert parse_hypergraph("2 1\r\n0 1\r\n") == (2, [[0, 1]])

    def test_dense_features(self):
        np.testing.assert_array_equal(parse_features("2 3\n1 2 3\n4 5 6.5\n"), [[1, 2, 3], [4, 5, 6.5]])

    def test_sparse_features(self):
        np.testing.assert_array_equal(parse_features("2 4\n0:1 3:2.5\n1:1\n"),
                                      [[1, 0, 0, 2.5], [0, 1, 0, 0]])

    def test_feature_width_error(self):
        with pytest.raises(DataFormatError, match="line 3: expected 2 values"):
            parse_features("2 2\n1 2\n3\n")

    def test_sparse_index_error(self):
        with pytest.raises(DataFormatError, match="index 7"):
            parse_features("1 3\n7:1\n")

    def test_labels(self):
        np.testing.assert_array_equal(parse_labels("0\n2\n1\n"), [0, 2, 1])
        with pytest.raises(DataFormatError, match="line 2"):
            parse_labels("0\n-1\n")

    def test_manifest(self):
        assert parse_manifest("expected_n=5\n# c\nclasses = 2\n") == {"expected_n": "5", "classes": "2"}
        with pytest.raises(DataFormatError, match="line 1"):
            parse_manifest("oops\n")

    def test_attach_isolated(self):
        assert attach_isolated(4, [[0, 1]]) == [[0, 1], [2], [3]]


class TestRoundTrip:
    def test_write_then_load(self, tmp_path):
        ds = synth_generate()
        write_dataset(ds, tmp_path)
        back = load_dataset(tmp_path / "hypergraph.txt", tmp_path / "features.txt", tmp_path / "labels.txt",
                            split_seed=7, manifest_path=tmp_path / "manifest.txt")
        np.testing.assert_array_equal(back.features, ds.features)
        np.testing.assert_array_equal(back.labels, ds.labels)
        assert back.hypergraph.edges == ds.hypergraph.edges
        np.testing.assert_array_equal(back.train_idx, ds.train_idx)

    def test_load_dir(self, tmp_path):
        ds = synth_generate(nodes_per_class=10, n_hyperedges=20, edge_size=3)
        write_dataset(ds, tmp_path)
        assert load_dataset_dir(tmp_path, split_seed=1).hypergraph.edges == ds.hypergraph.edges

    def test_manifest_mismatch_names_field(self, tmp_path):
        ds = synth_generate()
        write_dataset(ds, tmp_path)
        (tmp_path / "manifest.txt").write_text("expected_m=999\n")
        with pytest.raises(DataFormatError, match="expected_m"):
            load_dataset_dir(tmp_path)

    def test_edges_file(self, tmp_path):
        (tmp_path / "edges.txt").write_text("0 1\n1 2\n")
        (tmp_path / "features.txt").write_text("4 2\n" + "1 0\n" * 2 + "0 1\n" * 2)
        (tmp_path / "labels.txt").write_text("0\n0\n1\n1\n")
        ds = load_dataset_dir(tmp_path, split_seed=0)
        # node 3 has no edges, so it becomes a singleton hyperedge
        assert ds.hypergraph.edges == ((0, 1), (0, 1, 2), (1, 2), (3,))

    def test_knn_dir(self, tmp_path):
        ds = synth_generate(nodes_per_class=10, n_hyperedges=20, edge_size=3)
        write_dataset(ds, tmp_path)
        (tmp_path / "manifest.txt").unlink()
        back = load_dataset_dir(tmp_path, knn=4)
        assert back.hypergraph.m == 40 and structure_stats(back.hypergraph)["max_e"] == 4

    def test_row_count_mismatch(self, tmp_path):
        (tmp_path / "hypergraph.txt").write_text("3 1\n0 1 2\n")
        (tmp_path / "features.txt").write_text("2 1\n1\n2\n")
        (tmp_path / "labels.txt").write_text("0\n1\n0\n")
        with pytest.raises(DataFormatError, match="features have 2 rows"):
            load_dataset_dir(tmp_path)

    def test_missing_structure(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_dataset_dir(tmp_path)
