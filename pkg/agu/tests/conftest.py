import numpy as np
import pytest

from agu.bench.synthetic import generate_sbm
from agu.graph.graph import Graph
from agu.models.gnn import init_model
from agu.models.training import train
from agu.schemas.config import SbmSpec, TrainConfig


def make_graph(num_nodes, edges, d=3, seed=0, num_classes=2):
    """Graph with seeded random features, alternating labels and an even/odd train/test split."""
    rng = np.random.default_rng(seed)
    labels = np.arange(num_nodes) % num_classes
    train_mask = np.arange(num_nodes) % 4 != 3
    return Graph.from_edges(
        num_nodes,
        edges,
        features=rng.normal(size=(num_nodes, d)),
        labels=labels,
        train_mask=train_mask,
        test_mask=~train_mask,
        num_classes=num_classes,
    )


def random_connected_graph(num_nodes, seed, extra_edges=None, d=4):
    """Random spanning tree plus ``extra_edges`` random chords (a tree when 0)."""
    rng = np.random.default_rng(seed)
    edges = {(int(rng.integers(v)), v) for v in range(1, num_nodes)}
    target = len(edges) + (num_nodes // 3 if extra_edges is None else extra_edges)
    while len(edges) < target:
        u, v = sorted(int(x) for x in rng.integers(num_nodes, size=2))
        if u != v:
            edges.add((u, v))
    return make_graph(num_nodes, sorted(edges), d=d, seed=seed)


@pytest.fixture(name="chain")
def chain_fixture():
    """Path 0-1-2-3."""
    return make_graph(4, [(0, 1), (1, 2), (2, 3)])


@pytest.fixture(name="triangle")
def triangle_fixture():
    return make_graph(3, [(0, 1), (0, 2), (1, 2)])


@pytest.fixture(name="clique")
def clique_fixture():
    return make_graph(5, [(u, v) for u in range(5) for v in range(u + 1, 5)])


@pytest.fixture(name="small_sbm", scope="session")
def small_sbm_fixture():
    return generate_sbm(SbmSpec(n=60, blocks=2, p_in=0.3, p_out=0.02, d=8, signal=5.0, seed=0))


@pytest.fixture(name="trained_gcn", scope="session")
def trained_gcn_fixture(small_sbm):
    model = init_model("gcn", [small_sbm.d, 16, small_sbm.num_classes], seed=1)
    train(model, small_sbm, TrainConfig(epochs=100, seed=1))
    return model


@pytest.fixture(name="graph_dir")
def graph_dir_fixture(tmp_path, small_sbm):
    from agu.graph.io import save_graph_dir

    directory = tmp_path / "g"
    save_graph_dir(small_sbm, directory)
    return directory
