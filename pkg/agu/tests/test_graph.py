import networkx as nx
import numpy as np
import pytest

from agu.graph import (
    Graph,
    RequestKind,
    UnlearnRequest,
    apply_request,
    candidate_pairs,
    degrees,
    hop_distances,
    k_hop_set,
    normalized_adjacency,
    validate_request,
)
from agu.graph.io import load_graph_dir, read_graph, read_request, save_graph_dir, write_request
from agu.tests.conftest import make_graph, random_connected_graph
from agu.utils.exceptions import (
    ConfigError,
    ContractError,
    GraphFormatError,
    GraphReferenceError,
    IsolatedPairError,
)


def test_from_edges_builds_symmetric_adjacency(chain):
    """Test that both directions of each edge are stored."""
    assert chain.num_edges == 3
    assert chain.has_edge(1, 0) and chain.has_edge(0, 1)
    assert chain.edges() == [(0, 1), (1, 2), (2, 3)]
    assert degrees(chain).tolist() == [1, 2, 2, 1]


def test_graph_rejects_self_loops_and_duplicates():
    with pytest.raises(ContractError):
        Graph.from_edges(3, [(1, 1)])
    with pytest.raises(ContractError):
        Graph.from_edges(3, [(0, 1), (1, 0)])
    with pytest.raises(GraphReferenceError):
        Graph.from_edges(3, [(0, 3)])


def test_edge_request_removes_both_directions(chain):
    delta = apply_request(chain, UnlearnRequest.edges([(1, 0)]))
    assert not delta.remaining.has_edge(0, 1)
    assert not delta.remaining.has_edge(1, 0)
    assert delta.removed_edges == frozenset({(0, 1)})
    assert chain.has_edge(0, 1)


def test_edge_request_is_idempotent(chain):
    request = UnlearnRequest.edges([(0, 1)])
    once = apply_request(chain, request).remaining
    twice = apply_request(once, request).remaining
    assert once.edges() == twice.edges()


def test_node_request_isolates_and_zeroes(chain):
    delta = apply_request(chain, UnlearnRequest.nodes([1]))
    remaining = delta.remaining
    assert remaining.neighbors(1).size == 0
    assert np.count_nonzero(remaining.features[1]) == 0
    assert remaining.edges() == [(2, 3)]
    assert delta.removed_edges == frozenset({(0, 1), (1, 2)})
    assert not remaining.train_mask[1] and not remaining.test_mask[1]


def test_feature_request_keeps_structure(chain):
    delta = apply_request(chain, UnlearnRequest.features([2]))
    assert delta.remaining.edges() == chain.edges()
    assert np.count_nonzero(delta.remaining.features[2]) == 0
    assert np.array_equal(delta.remaining.features[0], chain.features[0])


def test_apply_request_rejects_unknown_node(chain):
    with pytest.raises(GraphReferenceError):
        apply_request(chain, UnlearnRequest.nodes([7]))


def test_validate_request_rejects_missing_edge_and_empty(chain):
    with pytest.raises(GraphReferenceError):
        validate_request(chain, UnlearnRequest.edges([(0, 3)]))
    with pytest.raises(ContractError):
        validate_request(chain, UnlearnRequest(RequestKind.NODE))


def test_request_kinds_do_not_mix():
    with pytest.raises(ContractError):
        UnlearnRequest(RequestKind.EDGE, node_ids=frozenset({1}))


def test_k_hop_set_on_chain(chain):
    assert k_hop_set(chain, 0, 1) == frozenset({1})
    assert k_hop_set(chain, 0, 2) == frozenset({1, 2})
    with pytest.raises(ConfigError):
        k_hop_set(chain, 0, 0)


@pytest.mark.parametrize("seed", range(10))
def test_hop_distances_match_networkx(seed):
    graph = random_connected_graph(25, seed=seed)
    reference = nx.single_source_shortest_path_length(nx.from_scipy_sparse_array(graph.adjacency), 0)
    distances = hop_distances(graph, [0])
    assert all(distances[v] == d for v, d in reference.items())


def test_candidate_pairs_prefers_common_neighbors(clique):
    assert candidate_pairs(clique, 0, 1, 1) == frozenset({2, 3, 4})


def test_candidate_pairs_falls_back_to_union(triangle):
    """Test the single common neighbor case: the union has one node."""
    assert candidate_pairs(triangle, 0, 1, 2) == frozenset({2})


def test_candidate_pairs_isolated_pair():
    graph = make_graph(3, [(0, 1)])
    with pytest.raises(IsolatedPairError):
        candidate_pairs(graph, 0, 1, 2)
    with pytest.raises(ContractError):
        candidate_pairs(graph, 0, 0, 2)


def test_normalized_adjacency_with_self_loops(chain):
    dense = normalized_adjacency(chain, self_loops=True).to_dense().numpy()
    degree = np.array([2.0, 3.0, 3.0, 2.0])
    assert dense[0, 0] == pytest.approx(0.5)
    assert dense[0, 1] == pytest.approx(1.0 / np.sqrt(degree[0] * degree[1]))
    assert np.allclose(dense, dense.T)


def test_permuted_relabels_everything(chain):
    perm = [3, 2, 1, 0]
    permuted = chain.permuted(perm)
    assert permuted.edges() == [(0, 1), (1, 2), (2, 3)]
    assert np.array_equal(permuted.features[0], chain.features[3])
    assert permuted.labels.tolist() == chain.labels[perm].tolist()


def test_graph_files_round_trip(tmp_path, small_sbm):
    save_graph_dir(small_sbm, tmp_path)
    loaded = load_graph_dir(tmp_path)
    assert loaded.edges() == small_sbm.edges()
    assert np.array_equal(loaded.features, small_sbm.features)
    assert np.array_equal(loaded.train_mask, small_sbm.train_mask)
    assert np.array_equal(loaded.test_mask, small_sbm.test_mask)


def test_read_graph_reports_line_numbers(tmp_path):
    path = tmp_path / "graph.tsv"
    path.write_text("2 1 2\n0\t0\t1.0\n1\t5\t2.0\n#edges\n0\t1\n", encoding="utf-8")
    with pytest.raises(GraphFormatError) as exc_info:
        read_graph(path)
    assert exc_info.value.line == 3
    assert "graph.tsv:3:" in exc_info.value.message


@pytest.mark.parametrize(
    "body, line",
    [
        ("2 1 2\n0\t0\t1.0\n1\t1\t2.0\n#edges\n0\t0\n", 5),
        ("2 1 2\n0\t0\t1.0\n1\t1\t2.0\n#edges\n0\t1\n1\t0\n", 6),
        ("2 1 2\n0\t0\t1.0\n1\t1\t2.0,3.0\n#edges\n", 3),
        ("2 1 2\n0\t0\t1.0\n1\t1\t2.0\n0\t1\n", 4),
        ("2 1\n", 1),
        ("2 -1 2\n0\t0\t\n1\t1\t\n#edges\n", 1),
        ("-1 1 2\n#edges\n", 1),
        ("2 1 0\n0\t0\t1.0\n1\t0\t2.0\n#edges\n", 1),
    ],
)
def test_read_graph_rejects_malformed_files(tmp_path, body, line):
    path = tmp_path / "graph.tsv"
    path.write_text(body, encoding="utf-8")
    with pytest.raises(GraphFormatError) as exc_info:
        read_graph(path)
    assert exc_info.value.line == line


def test_request_file_round_trip(tmp_path):
    request = UnlearnRequest.edges([(3, 1), (0, 2)])
    path = tmp_path / "request.tsv"
    write_request(request, path)
    assert read_request(path) == request


def test_read_request_rejects_empty_and_unknown_kind(tmp_path):
    path = tmp_path / "request.tsv"
    path.write_text("node\n", encoding="utf-8")
    with pytest.raises(GraphFormatError):
        read_request(path)
    path.write_text("vertex\n1\n", encoding="utf-8")
    with pytest.raises(GraphFormatError):
        read_request(path)
