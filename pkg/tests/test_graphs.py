import numpy as np
import pytest

from rrldp.graphs import (
    WeightedBipartiteGraph,
    averages,
    benchmark_graph,
    degree,
    generate_graph,
    item_degrees,
    item_weights,
    load_edge_list,
    save_edge_list,
    weight,
)


@pytest.fixture
def three_edge_graph():
    # participants 0 and 1, items 0 and 1; weights 0.5, 1.0, -0.5
    return WeightedBipartiteGraph(2, 2, [0, 1, 1], [0, 0, 1], [0.5, 1.0, -0.5])


class TestGraphStatistics:
    def test_degrees(self, three_edge_graph):
        assert degree(three_edge_graph, 0) == 2
        assert degree(three_edge_graph, 1) == 1

    def test_weights(self, three_edge_graph):
        assert weight(three_edge_graph, 0) == pytest.approx(1.5)
        assert weight(three_edge_graph, 1) == pytest.approx(-0.5)

    def test_averages(self, three_edge_graph):
        avg_k, avg_w = averages(three_edge_graph)
        assert avg_k == pytest.approx(3.0 / 6.0)
        assert avg_w == pytest.approx(1.0 / 6.0)

    def test_empty_graph(self):
        g = WeightedBipartiteGraph(3, 2, [], [], [])
        assert degree(g, 0) == 0 and degree(g, 1) == 0
        assert averages(g) == (0.0, 0.0)

    def test_complete_graph(self):
        n, m = 3, 2
        participants = np.repeat(np.arange(n), m)
        items = np.tile(np.arange(m), n)
        g = WeightedBipartiteGraph(n, m, participants, items, np.ones(n * m))
        assert all(degree(g, j) == n for j in range(m))
        avg_k, avg_w = averages(g)
        assert avg_k == pytest.approx(n * m / ((n + m) * (n + m - 1) / 2))
        assert avg_w == avg_k

    def test_density_normalization(self, three_edge_graph):
        avg_k, _ = averages(three_edge_graph, normalization="density")
        assert avg_k == pytest.approx(3.0 / 4.0)

    def test_item_out_of_range(self, three_edge_graph):
        with pytest.raises(IndexError):
            degree(three_edge_graph, 2)
        with pytest.raises(IndexError):
            weight(three_edge_graph, -1)

    def test_vector_helpers(self, three_edge_graph):
        np.testing.assert_array_equal(item_degrees(three_edge_graph), [2, 1])
        np.testing.assert_allclose(item_weights(three_edge_graph), [1.5, -0.5])


class TestValidation:
    def test_duplicate_edge_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            WeightedBipartiteGraph(2, 2, [0, 0], [1, 1], [0.5, 0.6])

    def test_weight_out_of_range(self):
        with pytest.raises(ValueError, match="weights"):
            WeightedBipartiteGraph(2, 2, [0], [1], [1.5])

    def test_index_out_of_range(self):
        with pytest.raises(ValueError, match="out of range"):
            WeightedBipartiteGraph(2, 2, [2], [0], [0.5])


class TestGeneration:
    def test_one_edge_per_participant(self):
        g = generate_graph(100, 3, "one-per-participant", "constant:1.0", seed=5)
        assert np.all(g.participant_degrees() == 1)
        assert item_degrees(g).sum() == 100
        assert np.all(g.weights == 1.0)

    def test_seed_determinism(self):
        a = generate_graph(500, 4, "bernoulli:0.3", "uniform", seed=9)
        b = generate_graph(500, 4, "bernoulli:0.3", "uniform", seed=9)
        np.testing.assert_array_equal(a.participants, b.participants)
        np.testing.assert_array_equal(a.items, b.items)
        np.testing.assert_array_equal(a.weights, b.weights)
        c = generate_graph(500, 4, "bernoulli:0.3", "uniform", seed=10)
        assert c.edge_count != a.edge_count or not np.array_equal(a.items, c.items)

    def test_bernoulli_edge_density(self):
        n, m, p = 10_000, 4, 0.5
        g = generate_graph(n, m, f"bernoulli:{p}", "uniform", seed=3)
        density = item_degrees(g).sum() / (n * m)
        se = np.sqrt(p * (1 - p) / (n * m))
        assert abs(density - p) < 3.0 * se

    def test_fixed_degree(self):
        g = generate_graph(50, 5, "fixed-degree:2", "discrete", seed=1)
        assert np.all(g.participant_degrees() == 2)
        assert set(np.unique(g.weights)) <= {0.0, 0.5, 1.0}

    def test_single_item(self):
        g = generate_graph(10, 5, "single-item:2", "constant:0.5", seed=0)
        assert np.all(g.items == 1)

    @pytest.mark.parametrize("bad", ["bern:0.5", "bernoulli:1.5", "fixed-degree:9"])
    def test_invalid_specs(self, bad):
        with pytest.raises(ValueError):
            generate_graph(10, 3, bad, "uniform", seed=0)

    def test_invalid_weight_spec(self):
        with pytest.raises(ValueError):
            generate_graph(10, 3, "one-per-participant", "gauss", seed=0)

    @pytest.mark.parametrize("name", ["single-item", "one-per-participant", "bernoulli-half"])
    def test_benchmarks_build(self, name):
        g = benchmark_graph(name, 200, 5, seed=2)
        assert (g.n, g.m) == (200, 5)


class TestEdgeListFormat:
    def test_round_trip(self, three_edge_graph, tmp_path):
        path = tmp_path / "edges.txt"
        save_edge_list(three_edge_graph, path)
        loaded = load_edge_list(path)
        assert (loaded.n, loaded.m) == (2, 2)
        np.testing.assert_array_equal(loaded.participants, three_edge_graph.participants)
        np.testing.assert_array_equal(loaded.items, three_edge_graph.items)
        np.testing.assert_array_equal(loaded.weights, three_edge_graph.weights)

    def test_file_is_one_based(self, three_edge_graph, tmp_path):
        path = tmp_path / "edges.txt"
        save_edge_list(three_edge_graph, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "2 2"
        assert lines[1].startswith("1 1 ")

    def test_byte_identical_rewrite(self, three_edge_graph, tmp_path):
        p1, p2 = tmp_path / "a.txt", tmp_path / "b.txt"
        save_edge_list(three_edge_graph, p1)
        save_edge_list(load_edge_list(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_malformed_header(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("2 2 7\n")
        with pytest.raises(ValueError, match="header"):
            load_edge_list(path)
