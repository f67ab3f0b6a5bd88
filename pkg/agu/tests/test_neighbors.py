import numpy as np
import pytest
import scipy.sparse as sp

from agu.graph import Graph, UnlearnRequest, apply_request, hop_distances
from agu.models.gnn import forward, init_model
from agu.neighbors.analysis import (
    affected_by_probe,
    affected_by_propagation,
    build_neighbor_report,
    marginal_filter,
    marginal_hop_limit,
    perturbed_adjacency,
    propagation_delta,
    select_top_affected,
)
from agu.schemas.config import FilterConfig
from agu.tests.conftest import random_connected_graph
from agu.utils.exceptions import ConfigError, DimensionError, EmptySetError, ProbeAmbiguityError


def _dense_normalized(adjacency):
    dense = adjacency.toarray()
    degree = dense.sum(axis=1)
    inv_sqrt = np.zeros_like(degree)
    inv_sqrt[degree > 0] = 1.0 / np.sqrt(degree[degree > 0])
    return inv_sqrt[:, None] * dense * inv_sqrt[None, :]


@pytest.fixture(name="identity_chain")
def identity_chain_fixture():
    return Graph.from_edges(4, [(0, 1), (1, 2), (2, 3)], features=np.eye(4))


def test_propagation_delta_is_zero_without_edits(chain):
    delta = propagation_delta(chain.adjacency, chain.adjacency, chain.feature_tensor, 2)
    assert delta.abs().max().item() == 0.0


def test_propagation_delta_rejects_bad_input(chain):
    with pytest.raises(DimensionError):
        propagation_delta(chain.adjacency, sp.csr_matrix((5, 5)), chain.feature_tensor, 1)
    with pytest.raises(ConfigError):
        propagation_delta(chain.adjacency, chain.adjacency, chain.feature_tensor, 0)


def test_one_step_edge_deletion_on_chain(identity_chain):
    """Test that deleting (0, 1) changes exactly rows 0, 1 and 2 after one step."""
    remaining = apply_request(identity_chain, UnlearnRequest.edges([(0, 1)])).remaining
    delta = propagation_delta(identity_chain.adjacency, remaining.adjacency, identity_chain.feature_tensor, 1)
    changed = delta.abs().amax(dim=1) > 1e-12
    assert changed.tolist() == [True, True, True, False]


def test_two_step_edge_deletion_matches_dense_powers(identity_chain):
    remaining = apply_request(identity_chain, UnlearnRequest.edges([(0, 1)])).remaining
    delta = propagation_delta(identity_chain.adjacency, remaining.adjacency, identity_chain.feature_tensor, 2)
    before = np.linalg.matrix_power(_dense_normalized(identity_chain.adjacency), 2)
    after = np.linalg.matrix_power(_dense_normalized(remaining.adjacency), 2)
    assert np.abs(delta.numpy() - (after - before)).max() < 1e-12
    # The degree change at node 1 reaches node 3 two steps out.
    assert affected_by_propagation(delta, range(4)) == frozenset({0, 1, 2, 3})


@pytest.mark.parametrize("seed", range(5))
def test_propagation_delta_matches_dense_powers_on_random_graphs(seed):
    graph = random_connected_graph(20, seed=seed)
    request = UnlearnRequest.edges(graph.edges()[:3])
    remaining = apply_request(graph, request).remaining
    delta = propagation_delta(graph.adjacency, remaining.adjacency, graph.feature_tensor, 2)
    before = np.linalg.matrix_power(_dense_normalized(graph.adjacency), 2) @ graph.features
    after = np.linalg.matrix_power(_dense_normalized(remaining.adjacency), 2) @ graph.features
    assert np.abs(delta.numpy() - (after - before)).max() < 1e-12


def test_affected_by_propagation_respects_remaining(identity_chain):
    remaining = apply_request(identity_chain, UnlearnRequest.edges([(0, 1)])).remaining
    delta = propagation_delta(identity_chain.adjacency, remaining.adjacency, identity_chain.feature_tensor, 1)
    assert affected_by_propagation(delta, [1, 3]) == frozenset({1})
    with pytest.raises(ConfigError):
        affected_by_propagation(delta, [1], tol=-1.0)


def test_gcn_probe_reaches_far_end_of_chain(chain):
    """Test that an edge deletion reaches node 3 through degree normalisation in GCN only."""
    delta = apply_request(chain, UnlearnRequest.edges([(0, 1)]))
    gcn = affected_by_probe("gcn", [3, 8, 2], chain, delta, seed=0)
    gat = affected_by_probe("gat", [3, 8, 2], chain, delta, seed=0)
    assert 3 in gcn.nodes
    assert 3 not in gat.nodes
    assert {0, 1, 2} <= gat.nodes


@pytest.mark.parametrize("arch", ["gcn", "sgc", "gat", "gin", "sage"])
@pytest.mark.parametrize("seed", range(3))
def test_probe_respects_hop_range_for_edge_requests(arch, seed):
    graph = random_connected_graph(30, seed=seed, extra_edges=0)
    request = UnlearnRequest.edges([graph.edges()[seed]])
    delta = apply_request(graph, request)
    num_layers = 2
    result = affected_by_probe(arch, [graph.d, 6, 3], graph, delta, seed=seed)
    hops = hop_distances(graph, [v for edge in request.edge_list for v in edge])
    reach = num_layers if arch in ("gcn", "sgc") else num_layers - 1
    assert all(hops[v] <= reach for v in result.nodes)


@pytest.mark.parametrize("arch", ["gcn", "gat", "sage"])
def test_probe_respects_hop_range_for_node_requests(arch):
    graph = random_connected_graph(30, seed=4, extra_edges=0)
    request = UnlearnRequest.nodes([5])
    delta = apply_request(graph, request)
    result = affected_by_probe(arch, [graph.d, 6, 3], graph, delta, seed=1, exclude=[5])
    hops = hop_distances(graph, [5])
    reach = 3 if arch == "gcn" else 2
    assert 5 not in result.nodes
    assert all(hops[v] <= reach for v in result.nodes)


def test_strict_probe_raises_on_disagreement(chain, mocker):
    delta = apply_request(chain, UnlearnRequest.edges([(0, 1)]))
    calls = {"count": 0}

    def flaky_forward(model, graph):
        calls["count"] += 1
        output = forward(model, graph)
        if calls["count"] == 2:
            # Second probe call on the remaining graph: pretend node 3 moved.
            output.logits[3] += 1.0
        return output

    mocker.patch("agu.neighbors.analysis.forward", side_effect=flaky_forward)
    with pytest.raises(ProbeAmbiguityError):
        affected_by_probe("gat", [3, 4, 2], chain, delta, seed=0, strict=True)


def test_perturbed_adjacency_skips_excluded_edges():
    graph = random_connected_graph(20, seed=2)
    excluded = graph.edges()[:5]
    first = perturbed_adjacency(graph, [0, 1, 2], 2, excluded, seed=9)
    second = perturbed_adjacency(graph, [0, 1, 2], 2, excluded, seed=9)
    assert (first != second).nnz == 0
    removed = graph.adjacency.nnz - first.nnz
    assert 0 < removed <= 2 * 3
    for u, v in excluded:
        assert first[u, v] == 1.0


def test_marginal_filter_thresholds(small_sbm):
    request = UnlearnRequest.edges(small_sbm.edges()[:4])
    delta = apply_request(small_sbm, request)
    marginal = list(range(small_sbm.n))
    assert marginal_filter(small_sbm, delta, request, marginal, 2, float("inf"), seed=0) == frozenset()
    kept = marginal_filter(small_sbm, delta, request, marginal, 2, 0.0, seed=0)
    assert kept <= frozenset(marginal)
    assert marginal_filter(small_sbm, delta, request, [], 2, 0.0, seed=0) == frozenset()
    with pytest.raises(ConfigError):
        marginal_filter(small_sbm, delta, request, marginal, 2, -1.0, seed=0)


def test_marginal_filter_with_unchanged_baseline_keeps_real_changes(identity_chain):
    """Test that a baseline equal to the original graph keeps every node whose propagation moved."""
    request = UnlearnRequest.edges([(0, 1)])
    delta = apply_request(identity_chain, request)
    kept = marginal_filter(identity_chain, delta, request, [2, 3], 2, 0.0, seed=0,
                           perturbed=identity_chain.adjacency)
    assert kept == frozenset({2, 3})


def test_selection_ranks_endpoint_above_far_node(chain):
    model = init_model("gcn", [3, 8, 2], seed=0)
    remaining = apply_request(chain, UnlearnRequest.edges([(0, 1)])).remaining
    selected, scores = select_top_affected(model, chain, remaining, [1, 2, 3], 1.0)
    assert selected == frozenset({1, 2, 3})
    assert scores[3] == 0.0
    assert scores[1] > scores[3]


def test_selection_count_and_ties(chain):
    model = init_model("gcn", [3, 8, 2], seed=0)
    # Nothing changes, so every score ties at zero and smaller ids win.
    selected, scores = select_top_affected(model, chain, chain, [0, 1, 2, 3], 0.5)
    assert set(scores.values()) == {0.0}
    assert selected == frozenset({0, 1})
    selected, _ = select_top_affected(model, chain, chain, [2, 3], 0.1)
    assert selected == frozenset({2})


def test_selection_rejects_empty_pool_and_bad_fraction(chain):
    model = init_model("gcn", [3, 4, 2], seed=0)
    with pytest.raises(EmptySetError):
        select_top_affected(model, chain, chain, [], 0.5)
    with pytest.raises(ConfigError):
        select_top_affected(model, chain, chain, [0], 0.0)


def test_marginal_hop_limit():
    assert marginal_hop_limit(UnlearnRequest.edges([(0, 1)]).kind, 2) == 1
    assert marginal_hop_limit(UnlearnRequest.nodes([0]).kind, 2) == 2


@pytest.mark.parametrize(
    "request_factory",
    [
        lambda g: UnlearnRequest.nodes(g.train_nodes()[:3]),
        lambda g: UnlearnRequest.edges(g.edges()[:5]),
        lambda g: UnlearnRequest.features(g.train_nodes()[:3]),
    ],
)
def test_neighbor_report_sets_are_nested(trained_gcn, small_sbm, request_factory):
    request = request_factory(small_sbm)
    delta = apply_request(small_sbm, request)
    report = build_neighbor_report(trained_gcn, small_sbm, delta, request, FilterConfig(k_ans_fraction=0.5))
    assert report.n_han <= report.n_fmn <= report.n_ac
    assert report.kept_marginal <= report.marginal <= report.n_ac
    assert not (report.n_ac & request.node_ids)
    assert len(report.n_han) == min(len(report.n_fmn), max(1, int(np.ceil(0.5 * len(report.n_fmn)))))
    if request.kind.value == "feature":
        assert report.marginal == frozenset()


def test_neighbor_report_has_no_marginals_for_attention_models(small_sbm):
    model = init_model("gat", [small_sbm.d, 8, 2], seed=0)
    request = UnlearnRequest.edges(small_sbm.edges()[:5])
    report = build_neighbor_report(model, small_sbm, apply_request(small_sbm, request), request, FilterConfig())
    assert report.marginal == frozenset()
    assert report.n_fmn == report.n_ac


def test_neighbor_report_schema(trained_gcn, small_sbm):
    request = UnlearnRequest.edges(small_sbm.edges()[:5])
    report = build_neighbor_report(trained_gcn, small_sbm, apply_request(small_sbm, request), request,
                                   FilterConfig())
    schema = report.to_schema()
    assert schema.n_ac == sorted(report.n_ac)
    assert sum(schema.hop_histograms["n_ac"].values()) == len(report.n_ac)
    assert report.summary().n_han == len(report.n_han)
