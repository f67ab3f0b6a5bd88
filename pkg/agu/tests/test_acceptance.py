"""
Property suites and directional end-to-end checks at benchmark scale.
"""
import numpy as np
import pandas as pd
import pytest

from agu.bench.harness import run_experiment, run_theta_sweep
from agu.graph import Graph, UnlearnRequest, apply_request, hop_distances
from agu.neighbors.analysis import affected_by_probe, affected_by_propagation, propagation_delta
from agu.schemas.config import ExperimentSpec, Method, SbmSpec, TaskKind, TrainConfig
from agu.tests.conftest import random_connected_graph

ARCHS = ["gcn", "sgc", "gat", "gin", "sage"]
DEGREE_BASED = {"gcn", "sgc"}
NUM_LAYERS = 2


def _instances(count, seed_offset=0):
    rng = np.random.default_rng(1234 + seed_offset)
    for index in range(count):
        n = int(rng.integers(15, 41))
        yield index, random_connected_graph(n, seed=index + seed_offset, extra_edges=int(rng.integers(0, n // 2)))


def _edge_request(graph, index):
    return UnlearnRequest.edges([graph.edges()[index % graph.num_edges]])


def _node_request(graph, index):
    return UnlearnRequest.nodes([index % graph.n])


def _dims(graph):
    return [graph.d, 6, 3]


@pytest.mark.slow
@pytest.mark.parametrize("arch", ARCHS)
def test_affected_range_per_architecture(arch):
    """Test the affected hop range of node and edge requests over 100 random graphs, with a tight witness."""
    node_reach = NUM_LAYERS + 1 if arch in DEGREE_BASED else NUM_LAYERS
    edge_reach = NUM_LAYERS if arch in DEGREE_BASED else NUM_LAYERS - 1
    widest = {"node": 0.0, "edge": 0.0}
    for index, graph in _instances(100):
        for kind, build, reach in (("node", _node_request, node_reach), ("edge", _edge_request, edge_reach)):
            request = build(graph, index)
            delta = apply_request(graph, request)
            result = affected_by_probe(arch, _dims(graph), graph, delta, seed=index, exclude=request.node_ids)
            sources = request.node_ids or {v for edge in request.edge_list for v in edge}
            hops = hop_distances(graph, sources)
            assert all(hops[v] <= reach for v in result.nodes), (kind, index)
            widest[kind] = max([widest[kind]] + [hops[v] for v in result.nodes])
    assert widest == {"node": node_reach, "edge": edge_reach}


@pytest.mark.parametrize("arch", ["gat", "gin", "sage"])
def test_edge_deletion_on_chain_stays_local_without_degree_normalisation(arch, chain):
    delta = apply_request(chain, UnlearnRequest.edges([(0, 1)]))
    assert 3 not in affected_by_probe(arch, [3, 8, 2], chain, delta, seed=0).nodes
    assert 3 in affected_by_probe("gcn", [3, 8, 2], chain, delta, seed=0).nodes


@pytest.mark.slow
def test_gcn_probe_matches_propagation():
    for index, graph in _instances(100, seed_offset=500):
        request = _edge_request(graph, index)
        delta = apply_request(graph, request)
        propagated = affected_by_propagation(
            propagation_delta(graph.adjacency, delta.remaining.adjacency, graph.feature_tensor, NUM_LAYERS),
            range(graph.n),
        )
        probed = affected_by_probe("gcn", [graph.d, 16, 3], graph, delta, seed=index).nodes
        assert probed == propagated, index


@pytest.mark.slow
def test_propagation_delta_matches_dense_oracle():
    for index, graph in _instances(50, seed_offset=900):
        request = UnlearnRequest.edges(graph.edges()[: 1 + index % 3])
        remaining = apply_request(graph, request).remaining
        for k in (1, 2, 3):
            delta = propagation_delta(graph.adjacency, remaining.adjacency, graph.feature_tensor, k)
            expected = (np.linalg.matrix_power(_dense_normalized(remaining), k)
                        - np.linalg.matrix_power(_dense_normalized(graph), k)) @ graph.features
            assert np.abs(delta.numpy() - expected).max() < 1e-12


def _dense_normalized(graph: Graph) -> np.ndarray:
    dense = graph.adjacency.toarray()
    degree = dense.sum(axis=1)
    inv_sqrt = np.zeros_like(degree)
    inv_sqrt[degree > 0] = 1.0 / np.sqrt(degree[degree > 0])
    return inv_sqrt[:, None] * dense * inv_sqrt[None, :]


def _sbm_spec(task, methods, trials, signal=2.0):
    return ExperimentSpec(
        sbm=SbmSpec(n=300, blocks=3, p_in=0.1, p_out=0.01, d=16, signal=signal),
        task=task,
        methods=methods,
        trials=trials,
        seed=7,
    )


def _mean_f1(report):
    frame = pd.DataFrame([{"method": r.method, "f1": r.f1} for r in report.trials])
    return frame.groupby("method")["f1"].mean().to_dict()


@pytest.mark.slow
@pytest.mark.parametrize("task", [TaskKind.NODE, TaskKind.EDGE, TaskKind.FEATURE])
def test_unlearning_tracks_the_retrain_oracle(task):
    report = run_experiment(_sbm_spec(task, [Method.AGU, Method.RETRAIN, Method.REVERSE_CE], trials=10))
    f1 = _mean_f1(report)
    assert abs(f1["agu"] - f1["retrain"]) <= 0.03
    assert f1["agu"] >= f1["reverse_ce"]
    if task is TaskKind.NODE:
        times = pd.DataFrame([{"method": r.method, "trial": r.trial, "ms": r.timing["time_ms"]} for r in report.trials])
        per_trial = times.pivot(index="trial", columns="method", values="ms")
        assert (per_trial["agu"] < per_trial["retrain"]).all()


@pytest.mark.slow
def test_unlearning_injected_edges_beats_training_on_noise():
    spec = _sbm_spec(TaskKind.ATTACK, [Method.AGU, Method.VANILLA, Method.RETRAIN], trials=10, signal=0.5)
    report = run_experiment(spec)
    f1 = _mean_f1(report)
    assert f1["agu"] >= f1["vanilla"] + 0.02
    assert abs(f1["agu"] - f1["retrain"]) <= 0.05
    gaps = pd.DataFrame([{"method": r.method, "gap": r.similarity_gap} for r in report.trials])
    assert gaps.groupby("method")["gap"].mean()["agu"] > 0


@pytest.mark.slow
def test_theta_sweep_keeps_fewer_marginal_neighbors_as_theta_grows():
    spec = _sbm_spec(TaskKind.NODE, [Method.AGU], trials=3)
    spec = spec.model_copy(update={"train": TrainConfig(epochs=100)})
    sweep = run_theta_sweep(spec, [0.0, 5e-5, 1e-4, 5e-4, 1e-2])
    kept = [point.kept_marginal for point in sweep.points]
    assert kept == sorted(kept, reverse=True)
    f1 = {point.theta: point.f1 for point in sweep.points}
    assert f1[1e-4] >= f1[1e-2] - 0.01
