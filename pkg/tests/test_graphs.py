import json

import numpy as np
import pytest

from ahsg.graphs import (
    UNKNOWN,
    AttackBudget,
    Graph,
    GraphFormatError,
    apply_perturbation,
    budget_from_ratio,
    complement_delta,
    flip_count,
    load_graph,
    matrix_to_pairs,
    normalized_adjacency,
    pack_pair,
    pair_count,
    pairs_to_matrix,
    save_attacked_graph,
    save_graph,
    unpack_pair,
)


def write_dataset(directory, edges, features, labels, c, splits):
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "graph.edges").write_text(
        "".join(f"{u} {v}\n" for u, v in edges))
    n = len(features)
    d = len(features[0]) if n else 0
    (directory / "features.txt").write_text(
        f"{n} {d}\n" + "".join(" ".join(str(x) for x in row) + "\n" for row in features))
    (directory / "labels.txt").write_text(
        f"{c}\n" + "".join(f"{node} {lab}\n" for node, lab in labels))
    (directory / "splits.txt").write_text(
        "".join(f"{node} {kind}\n" for node, kind in splits))


def tiny_dataset(directory):
    write_dataset(
        directory,
        edges=[(0, 1), (1, 2)],
        features=[[1.0, 0.0], [0.5, 0.5], [0.0, 1.0]],
        labels=[(0, 0), (1, 1)],
        c=2,
        splits=[(0, "train"), (1, "train"), (2, "test")],
    )


class TestLoadGraph:
    def test_two_node_edge(self, tmp_path):
        write_dataset(tmp_path, [(0, 1)], [[1.0], [2.0]], [(0, 0)], 1,
                      [(0, "train"), (1, "test")])
        g = load_graph(tmp_path)
        assert np.array_equal(g.adjacency, [[0, 1], [1, 0]])
        assert g.labels[1] == UNKNOWN

    def test_self_loop_rejected(self, tmp_path):
        write_dataset(tmp_path, [(0, 0)], [[1.0], [2.0]], [(0, 0)], 1,
                      [(0, "train")])
        with pytest.raises(GraphFormatError, match="self-loop"):
            load_graph(tmp_path)

    def test_duplicate_pair_rejected(self, tmp_path):
        write_dataset(tmp_path, [(0, 1), (1, 0)], [[1.0], [2.0]], [(0, 0)], 1,
                      [(0, "train")])
        with pytest.raises(GraphFormatError, match="duplicate"):
            load_graph(tmp_path)

    def test_missing_file(self, tmp_path):
        tiny_dataset(tmp_path)
        (tmp_path / "labels.txt").unlink()
        with pytest.raises(GraphFormatError, match="missing"):
            load_graph(tmp_path)

    def test_malformed_line_reports_lineno(self, tmp_path):
        tiny_dataset(tmp_path)
        (tmp_path / "graph.edges").write_text("0 1\nnot an edge\n")
        with pytest.raises(GraphFormatError, match="graph.edges:2"):
            load_graph(tmp_path)

    def test_node_id_out_of_range(self, tmp_path):
        tiny_dataset(tmp_path)
        (tmp_path / "graph.edges").write_text("0 7\n")
        with pytest.raises(GraphFormatError, match="out of range"):
            load_graph(tmp_path)

    def test_label_out_of_range(self, tmp_path):
        tiny_dataset(tmp_path)
        (tmp_path / "labels.txt").write_text("2\n0 5\n")
        with pytest.raises(GraphFormatError, match="label 5 out of range"):
            load_graph(tmp_path)

    def test_overlapping_masks(self, tmp_path):
        tiny_dataset(tmp_path)
        (tmp_path / "splits.txt").write_text("0 train\n0 test\n")
        with pytest.raises(GraphFormatError, match="overlap"):
            load_graph(tmp_path)

    def test_roundtrip(self, tmp_path, toy_graph):
        save_graph(toy_graph, tmp_path / "ds")
        loaded = load_graph(tmp_path / "ds")
        assert np.array_equal(loaded.adjacency, toy_graph.adjacency)
        assert np.allclose(loaded.features, toy_graph.features)
        assert np.array_equal(loaded.labels, toy_graph.labels)
        assert np.array_equal(loaded.train_mask, toy_graph.train_mask)
        assert np.array_equal(loaded.test_mask, toy_graph.test_mask)


class TestGraphInvariants:
    def test_asymmetric_rejected(self):
        A = np.array([[0, 1], [0, 0]])
        with pytest.raises(ValueError, match="symmetric"):
            Graph(A, np.zeros((2, 1)), np.zeros(2, dtype=int), 1,
                  np.zeros(2, dtype=bool), np.zeros(2, dtype=bool))

    def test_nonzero_diagonal_rejected(self):
        A = np.eye(2)
        with pytest.raises(ValueError, match="diagonal"):
            Graph(A, np.zeros((2, 1)), np.zeros(2, dtype=int), 1,
                  np.zeros(2, dtype=bool), np.zeros(2, dtype=bool))

    def test_train_node_needs_label(self):
        A = np.zeros((2, 2))
        labels = np.array([0, UNKNOWN])
        train = np.array([False, True])
        with pytest.raises(ValueError, match="known label"):
            Graph(A, np.zeros((2, 1)), labels, 1, train, np.zeros(2, dtype=bool))

    def test_arrays_frozen(self, toy_graph):
        with pytest.raises(ValueError):
            toy_graph.adjacency[0, 1] = 1


class TestNormalizedAdjacency:
    def test_two_node(self):
        out = normalized_adjacency(np.array([[0, 1], [1, 0]]))
        assert np.allclose(out, [[0.5, 0.5], [0.5, 0.5]])

    def test_edgeless_is_identity(self):
        assert np.allclose(normalized_adjacency(np.zeros((3, 3))), np.eye(3))

    def test_against_dense_oracle(self):
        rng = np.random.default_rng(3)
        A = (rng.random((6, 6)) < 0.4).astype(float)
        A = np.triu(A, 1)
        A = A + A.T
        out = normalized_adjacency(A)
        # independent recomputation: explicit loops over the definition
        At = A + np.eye(6)
        deg = At.sum(axis=1)
        expect = np.empty((6, 6))
        for i in range(6):
            for j in range(6):
                expect[i, j] = At[i, j] / np.sqrt(deg[i] * deg[j])
        assert np.allclose(out, expect, atol=1e-14)
        assert np.array_equal(out, out.T)


class TestPerturbationAlgebra:
    def test_complement_delta_cases(self):
        A = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 0]], dtype=np.int8)
        C = complement_delta(A)
        assert C[0, 1] == -1          # removable edge
        assert C[0, 2] == 1           # addable edge
        assert np.all(np.diag(C) == 0)

    def test_apply_removal_insertion_identity(self):
        A = np.array([[0, 1], [1, 0]], dtype=np.int8)
        s = np.array([1], dtype=np.int8)
        out = apply_perturbation(A, s)
        assert out[0, 1] == 0 and out[1, 0] == 0
        A0 = np.zeros((2, 2), dtype=np.int8)
        assert apply_perturbation(A0, s)[0, 1] == 1
        assert np.array_equal(apply_perturbation(A, np.array([0], dtype=np.int8)), A)

    def test_involution_and_flip_count(self):
        rng = np.random.default_rng(7)
        n = 9
        A = (rng.random((n, n)) < 0.3).astype(np.int8)
        A = np.triu(A, 1)
        A = A + A.T
        s = (rng.random(pair_count(n)) < 0.25).astype(np.int8)
        A1 = apply_perturbation(A, s)
        assert flip_count(A, A1) == int(s.sum())
        assert np.array_equal(apply_perturbation(A1, s), A)

    def test_flip_count_shape_mismatch(self):
        with pytest.raises(ValueError, match="differ"):
            flip_count(np.zeros((2, 2)), np.zeros((3, 3)))


class TestBudget:
    def _graph_with_edges(self, n, num_edges):
        # path edges then skip-2 edges until the requested count is reached
        A = np.zeros((n, n), dtype=np.int8)
        count = 0
        for offset in (1, 2, 3):
            for i in range(n - offset):
                if count == num_edges:
                    break
                A[i, i + offset] = A[i + offset, i] = 1
                count += 1
        assert count == num_edges
        y = np.zeros(n, dtype=int)
        train = np.zeros(n, dtype=bool)
        train[0] = True
        return Graph(A, np.zeros((n, 1)), y, 1, train, ~train)

    def test_cora_scale_arithmetic(self):
        g = self._graph_with_edges(2708, 5278)
        assert budget_from_ratio(g, 0.10).epsilon_flips == 527

    def test_citeseer_scale_arithmetic(self):
        g = self._graph_with_edges(3327, 4552)
        assert budget_from_ratio(g, 0.20).epsilon_flips == 910

    def test_zero_ratio(self, toy_graph):
        assert budget_from_ratio(toy_graph, 0.0).epsilon_flips == 0

    def test_ratio_out_of_range(self, toy_graph):
        with pytest.raises(ValueError):
            budget_from_ratio(toy_graph, 1.5)
        with pytest.raises(ValueError):
            AttackBudget(-1)


class TestPairIndex:
    @pytest.mark.parametrize("n", [2, 3, 10, 100])
    def test_roundtrip(self, n):
        k = np.arange(pair_count(n))
        i, j = unpack_pair(n, k)
        assert np.array_equal(pack_pair(n, i, j), k)
        assert np.all(i < j)

    def test_pack_order_insensitive(self):
        assert pack_pair(5, 3, 1) == pack_pair(5, 1, 3)

    def test_matrix_roundtrip(self):
        rng = np.random.default_rng(0)
        n = 8
        s = rng.random(pair_count(n))
        S = pairs_to_matrix(n, s)
        assert np.array_equal(S, S.T)
        assert np.all(np.diag(S) == 0)
        assert np.array_equal(matrix_to_pairs(S), s)


def test_save_attacked_graph_manifest(tmp_path, toy_graph):
    s = np.zeros(pair_count(toy_graph.n), dtype=np.int8)
    s[:3] = 1
    A_hat = apply_perturbation(toy_graph.adjacency, s)
    save_attacked_graph(A_hat, toy_graph, tmp_path / "out",
                        {"method": "test", "seed": 0, "budget": 3})
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["flip_count"] == 3
    assert manifest["method"] == "test"
    assert (tmp_path / "out" / "graph.edges").exists()
