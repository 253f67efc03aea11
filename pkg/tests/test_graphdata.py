from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from subgatt.errors import ContractError, FormatError, IngestionError, ParseError, SplitError
from subgatt.graphdata import (Graph, GraphDataset, generate_clique_dataset, has_k_clique, load_tu_dataset,
                               normalized_adjacency, save_tu_dataset, stratified_kfold, synthesize_features)

from conftest import graph_from_edges, random_graph

MUTAG = Path(__file__).resolve().parents[1] / "data" / "MUTAG"


def write_tu(directory, name, edges, indicator, labels, node_labels=None, attributes=None):
    directory.mkdir(parents=True, exist_ok=True)
    (directory / f"{name}_A.txt").write_text("".join(f"{i}, {j}\n" for i, j in edges))
    (directory / f"{name}_graph_indicator.txt").write_text("".join(f"{g}\n" for g in indicator))
    (directory / f"{name}_graph_labels.txt").write_text("".join(f"{y}\n" for y in labels))
    if node_labels is not None:
        (directory / f"{name}_node_labels.txt").write_text("".join(f"{v}\n" for v in node_labels))
    if attributes is not None:
        (directory / f"{name}_node_attributes.txt").write_text(
            "".join(", ".join(map(str, row)) + "\n" for row in attributes))
    return directory


# -- loading ---------------------------------------------------------------


def test_mutag_statistics():
    d = load_tu_dataset(MUTAG)
    assert len(d) == 188
    assert d.max_nodes == 28
    assert d.avg_nodes == pytest.approx(17.93, abs=0.01)
    assert d.num_classes == 2
    for g in d.graphs:
        np.testing.assert_array_equal(g.adjacency, g.adjacency.T)
        assert np.all(np.diag(g.adjacency) == 0)
        assert g.features.shape == (g.n, d.feature_dim)


def test_single_isolated_node(tmp_path):
    d = load_tu_dataset(write_tu(tmp_path / "ONE", "ONE", [], [1], [0]))
    assert len(d) == 1 and d.graphs[0].n == 1
    np.testing.assert_array_equal(d.graphs[0].adjacency, [[0.0]])
    np.testing.assert_array_equal(d.graphs[0].features, [[1.0]])


def test_labels_remapped_and_edges_symmetrized(tmp_path):
    path = write_tu(tmp_path / "T", "T", [(1, 2), (2, 3), (4, 5)], [1, 1, 1, 2, 2], [1, -1])
    d = load_tu_dataset(path)
    assert [g.label for g in d.graphs] == [1, 0]
    assert d.label_values == [-1, 1]
    np.testing.assert_array_equal(d.graphs[0].adjacency, [[0, 1, 0], [1, 0, 1], [0, 1, 0]])


def test_attributes_preferred_over_node_labels(tmp_path):
    attrs = [[0.5, 1.5], [2.0, -1.0], [3.25, 0.0]]
    d = load_tu_dataset(write_tu(tmp_path / "P", "P", [(1, 2)], [1, 1, 1], [0], [3, 4, 3], attrs))
    np.testing.assert_array_equal(d.graphs[0].features, attrs)


def test_node_labels_one_hot(tmp_path):
    d = load_tu_dataset(write_tu(tmp_path / "N", "N", [(1, 2)], [1, 1, 1], [0], [7, 3, 7]))
    np.testing.assert_array_equal(d.graphs[0].features, [[0, 1], [1, 0], [0, 1]])


def test_missing_file_named(tmp_path):
    path = write_tu(tmp_path / "M", "M", [(1, 2)], [1, 1], [0])
    (path / "M_graph_labels.txt").unlink()
    with pytest.raises(IngestionError, match="M_graph_labels.txt"):
        load_tu_dataset(path)


def test_cross_graph_edge_reports_line(tmp_path):
    path = write_tu(tmp_path / "X", "X", [(1, 2), (2, 3)], [1, 1, 2], [0, 1])
    with pytest.raises(FormatError, match=":2:"):
        load_tu_dataset(path)


def test_non_numeric_token_reports_line(tmp_path):
    path = write_tu(tmp_path / "B", "B", [(1, 2)], [1, 1], [0])
    (path / "B_A.txt").write_text("1, 2\n2, x\n")
    with pytest.raises(ParseError, match=":2:"):
        load_tu_dataset(path)


def test_roundtrip_preserves_everything(tmp_path):
    d = load_tu_dataset(MUTAG)
    save_tu_dataset(d, tmp_path / "MUTAG2", "MUTAG2")
    back = load_tu_dataset(tmp_path / "MUTAG2")
    assert len(back) == len(d) and back.num_classes == d.num_classes
    for g, h in zip(d.graphs, back.graphs):
        np.testing.assert_array_equal(g.adjacency, h.adjacency)
        np.testing.assert_array_equal(g.features, h.features)
        assert g.label == h.label


def test_synthetic_roundtrip_with_meta(tmp_path):
    import json
    d = generate_clique_dataset(5)
    save_tu_dataset(d, tmp_path / "C", "C", meta={"seed": 5, "num_graphs": 50, "positives": 25})
    back = load_tu_dataset(tmp_path / "C")
    assert json.loads((tmp_path / "C" / "meta.json").read_text()) == {"seed": 5, "num_graphs": 50, "positives": 25}
    for g, h in zip(d.graphs, back.graphs):
        np.testing.assert_array_equal(g.adjacency, h.adjacency)
        np.testing.assert_array_equal(g.features, h.features)
        assert g.label == h.label


# -- degree features -------------------------------------------------------


def _dataset(*graphs):
    return GraphDataset([Graph(g.adjacency, np.zeros((g.n, 0)), 0) for g in graphs], 1)


def test_path_degree_features():
    d = synthesize_features(_dataset(graph_from_edges(3, [(0, 1), (1, 2)])), 5)
    np.testing.assert_array_equal(d.graphs[0].features, [[0, 1, 0], [0, 0, 1], [0, 1, 0]])


def test_isolated_node_degree_zero():
    d = synthesize_features(_dataset(graph_from_edges(2, [(0, 1)]), graph_from_edges(1, [])), 5)
    np.testing.assert_array_equal(d.graphs[1].features, [[1, 0]])


def test_star_degree_capped():
    d = synthesize_features(_dataset(graph_from_edges(6, [(0, i) for i in range(1, 6)])), 3)
    assert d.feature_dim == 4
    assert np.argmax(d.graphs[0].features[0]) == 3
    assert np.all(np.argmax(d.graphs[0].features[1:], axis=1) == 1)


# -- synthetic cliques -----------------------------------------------------


@pytest.mark.parametrize("seed", [0, 1, 7, 123])
def test_clique_dataset_balance_and_labels(seed):
    d = generate_clique_dataset(seed)
    assert len(d) == 50 and sum(d.labels) == 25
    for g in d.graphs:
        assert g.n == 8
        np.testing.assert_array_equal(g.adjacency, g.adjacency.T)
        assert has_k_clique(g.adjacency, 4) == bool(g.label)


def test_clique_dataset_deterministic():
    a, b = generate_clique_dataset(11), generate_clique_dataset(11)
    for g, h in zip(a.graphs, b.graphs):
        assert g.adjacency.tobytes() == h.adjacency.tobytes()
        assert g.features.tobytes() == h.features.tobytes()
        assert g.label == h.label


def test_clique_dataset_single_bridge():
    for g in generate_clique_dataset(3).graphs:
        # 6 edges at most per community plus one bridge.
        assert g.adjacency.sum() / 2 <= 13


# -- normalized adjacency --------------------------------------------------


def test_normalized_adjacency_examples():
    np.testing.assert_array_equal(normalized_adjacency(np.zeros((1, 1))), [[1.0]])
    np.testing.assert_allclose(normalized_adjacency(np.array([[0, 1], [1, 0]])), np.full((2, 2), 0.5))
    with pytest.raises(ContractError):
        normalized_adjacency(np.array([[0, -1], [-1, 0]]))


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 10), seed=st.integers(0, 2**31 - 1), weighted=st.booleans())
def test_normalized_adjacency_symmetric_with_bounded_spectrum(n, seed, weighted):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n)
    a = g.adjacency * (rng.uniform(0.1, 3.0, size=(n, n)) if weighted else 1.0)
    a = (a + a.T) / 2
    m = normalized_adjacency(a)
    np.testing.assert_allclose(m, m.T, atol=1e-15)
    assert np.max(np.abs(np.linalg.eigvalsh(m))) <= 1 + 1e-9


# -- folds -----------------------------------------------------------------


def test_balanced_twenty_graphs_one_per_class_per_fold():
    labels = [0] * 10 + [1] * 10
    split = stratified_kfold(labels, 10, seed=3)
    for f in range(10):
        assert sorted(np.asarray(labels)[split.test_indices(f)]) == [0, 1]


def test_mutag_fold_sizes():
    split = stratified_kfold(load_tu_dataset(MUTAG), 10, seed=0)
    assert set(np.bincount(split.assignments)) <= {18, 19}


def test_folds_partition_and_stratify():
    labels = np.array([0] * 63 + [1] * 125)
    split = stratified_kfold(labels, 10, seed=5)
    seen = np.concatenate([split.test_indices(f) for f in range(10)])
    assert sorted(seen) == list(range(len(labels)))
    for f in range(10):
        test = split.test_indices(f)
        for cls in (0, 1):
            ideal = (labels == cls).sum() / 10
            assert abs((labels[test] == cls).sum() - ideal) <= 1


def test_split_deterministic_and_errors():
    labels = [0] * 12 + [1] * 12
    assert np.array_equal(stratified_kfold(labels, 4, 9).assignments, stratified_kfold(labels, 4, 9).assignments)
    with pytest.raises(SplitError, match="class 1"):
        stratified_kfold([0] * 10 + [1] * 3, 10, 0)
