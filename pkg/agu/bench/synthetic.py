"""
Synthetic datasets, request sampling and the cross-class edge attack.
"""
from __future__ import annotations

import logging
import math
from typing import TYPE_CHECKING

import networkx as nx
import numpy as np

from agu.graph.graph import Graph, RequestKind, UnlearnRequest, canonical_edge
from agu.utils.exceptions import AttackImpossibleError, ConfigError, ContractError
from agu.utils.seeding import derive_seed, numpy_rng

if TYPE_CHECKING:
    from agu.schemas.config import SbmSpec

logger = logging.getLogger(__name__)

MAX_ATTACK_DRAWS = 1000


def generate_sbm(spec: "SbmSpec") -> Graph:
    """
    Planted-partition graph with block labels and noisy one-hot block features.

    features[v] = signal * onehot(block(v)) padded to d columns, plus U[0, 1) noise.
    """
    size = spec.n // spec.blocks
    probabilities = [
        [spec.p_in if a == b else spec.p_out for b in range(spec.blocks)] for a in range(spec.blocks)
    ]
    sbm = nx.stochastic_block_model([size] * spec.blocks, probabilities, seed=derive_seed(spec.seed, "edges"))
    edges = [canonical_edge(u, v) for u, v in sbm.edges()]

    labels = np.repeat(np.arange(spec.blocks), size)
    features = numpy_rng(derive_seed(spec.seed, "features")).random((spec.n, spec.d))
    features[np.arange(spec.n), labels] += spec.signal

    order = numpy_rng(derive_seed(spec.seed, "split")).permutation(spec.n)
    cut = int(round(spec.train_fraction * spec.n))
    train_mask = np.zeros(spec.n, dtype=bool)
    test_mask = np.zeros(spec.n, dtype=bool)
    train_mask[order[:cut]] = True
    test_mask[order[cut:]] = True

    graph = Graph.from_edges(spec.n, edges, features=features, labels=labels, train_mask=train_mask,
                             test_mask=test_mask, num_classes=spec.blocks)
    logger.info(f"Generated SBM with {graph.n} nodes, {graph.num_edges} edges, {spec.blocks} blocks")
    return graph


def sample_unlearn_request(graph: Graph, kind: RequestKind | str, ratio: float, seed: int) -> UnlearnRequest:
    """
    Seeded uniform sample without replacement: train nodes for node and
    feature requests, all edges for edge requests. At least one element.
    """
    kind = RequestKind(kind)
    if not 0 < ratio < 1:
        raise ConfigError(f"ratio must lie in (0, 1), got {ratio}")
    rng = numpy_rng(seed)
    if kind is RequestKind.EDGE:
        pool = graph.edges()
    else:
        pool = graph.train_nodes()
    if not pool:
        raise ContractError(f"graph has nothing to sample a {kind.value} request from")
    count = max(1, int(round(ratio * len(pool))))
    chosen = sorted(rng.choice(len(pool), size=count, replace=False).tolist())
    if kind is RequestKind.EDGE:
        return UnlearnRequest.edges(pool[i] for i in chosen)
    return UnlearnRequest(kind, node_ids=frozenset(pool[i] for i in chosen))


def _cross_class_capacity(graph: Graph) -> int:
    counts = np.bincount(graph.labels, minlength=graph.num_classes).astype(np.int64)
    pairs = (int(counts.sum()) ** 2 - int((counts ** 2).sum())) // 2
    existing = sum(1 for u, v in graph.edges() if graph.labels[u] != graph.labels[v])
    return pairs - existing


def edge_attack(graph: Graph, ratio: float, seed: int) -> tuple[Graph, UnlearnRequest]:
    """
    Inject ⌈ratio·|E|⌉ new edges between nodes of different classes.

    Returns:
        The noisy graph and an edge request listing exactly the injected edges.

    Raises:
        AttackImpossibleError: fewer than two classes, or not enough free cross-class pairs
    """
    if ratio * graph.num_edges < 1:
        raise ContractError(f"ratio {ratio} injects no edge into a graph with {graph.num_edges} edges")
    if len(np.unique(graph.labels)) < 2:
        raise AttackImpossibleError("all nodes share one class; no cross-class edge exists")
    count = math.ceil(ratio * graph.num_edges)
    if _cross_class_capacity(graph) < count:
        raise AttackImpossibleError(f"cannot place {count} new cross-class edges")

    rng = numpy_rng(seed)
    injected: set[tuple[int, int]] = set()
    draws = 0
    while len(injected) < count:
        draws += 1
        if draws > MAX_ATTACK_DRAWS * count:
            raise AttackImpossibleError(f"placed only {len(injected)} of {count} edges")
        u, v = (int(x) for x in rng.integers(graph.n, size=2))
        if u == v or graph.labels[u] == graph.labels[v] or graph.has_edge(u, v):
            continue
        injected.add(canonical_edge(u, v))

    noisy = graph.with_edges_added(injected)
    logger.info(f"Injected {len(injected)} cross-class edges")
    return noisy, UnlearnRequest.edges(injected)
