"""
Unlearning objectives.

Every loss takes forward outputs of the model being unlearned (on the
remaining graph) and a FrozenReference computed once from the trained model.
Deleted-edge representations come from the model being unlearned,
comparison pairs from the frozen reference embeddings.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import torch

from agu.graph.graph import Edge, Graph, candidate_pairs
from agu.models.gnn import GNN, forward
from agu.numeric.tensor import concat_cols, cross_entropy, gather_rows, kl_divergence, mse, row_softmax
from agu.utils.exceptions import ContractError, IsolatedPairError
from agu.utils.seeding import numpy_rng

logger = logging.getLogger(__name__)

Pair = tuple[int, int]


def edge_free_distribution(model: GNN, graph: Graph) -> torch.Tensor:
    """Row-softmax predictions with every edge removed, so each node sees only its own features."""
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            return row_softmax(forward(model, graph.without_edges()).logits)
    finally:
        model.train(was_training)


def uniform_divergence(distribution: torch.Tensor) -> torch.Tensor:
    """
    KL(p_u ‖ uniform) for every row: log C − H(p_u).

    A prediction this far from p_u carries no more of p_u than a uniform guess.
    """
    uniform = torch.full_like(distribution, 1.0 / distribution.shape[1])
    return kl_divergence(distribution, uniform, range(distribution.shape[0]), reduction="none")


@dataclass(frozen=True)
class FrozenReference:
    """
    Quantities of the trained model on the original graph, fixed for a whole unlearning run.
    """
    embeddings: torch.Tensor
    pseudo_labels: torch.Tensor
    edge_free: torch.Tensor
    feature_ceiling: torch.Tensor

    @classmethod
    def build(cls, model: GNN, graph: Graph) -> "FrozenReference":
        was_training = model.training
        model.eval()
        try:
            with torch.no_grad():
                output = forward(model, graph)
        finally:
            model.train(was_training)
        edge_free = edge_free_distribution(model, graph)
        return cls(
            embeddings=output.embeddings.detach().clone(),
            pseudo_labels=output.logits.argmax(dim=1),
            edge_free=edge_free,
            feature_ceiling=uniform_divergence(edge_free),
        )

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for tensor in (self.embeddings, self.pseudo_labels, self.edge_free, self.feature_ceiling):
            digest.update(tensor.detach().cpu().numpy().tobytes())
        return digest.hexdigest()


def edge_candidate_sets(
    graph: Graph,
    edges: Iterable[Edge],
    k: int,
    exclude: Iterable[int] = (),
) -> dict[Edge, Optional[frozenset[int]]]:
    """
    Comparison-node universe of each deleted edge on the original graph.

    ``None`` marks an edge with no usable candidates; its pair falls back to
    a uniformly random pair.
    """
    excluded = frozenset(exclude)
    sets: dict[Edge, Optional[frozenset[int]]] = {}
    for u, v in sorted(edges):
        try:
            candidates = candidate_pairs(graph, u, v, k) - excluded
        except IsolatedPairError as e:
            logger.warning(f"{e.message}; using random pairs")
            candidates = frozenset()
        sets[(u, v)] = candidates or None
    return sets


def _draw_pairs(universes: Sequence[Sequence[int]], seed: int) -> list[Pair]:
    rng = numpy_rng(seed)
    pairs = []
    for universe in universes:
        p = universe[int(rng.integers(len(universe)))]
        q = universe[int(rng.integers(len(universe)))]
        pairs.append((int(p), int(q)))
    return pairs


def sample_random_pairs(num_nodes: int, count: int, seed: int) -> list[Pair]:
    return _draw_pairs([range(num_nodes)] * count, seed)


def sample_candidate_pairs(
    candidate_sets: Mapping[Edge, Optional[frozenset[int]]],
    num_nodes: int,
    seed: int,
) -> list[Pair]:
    """One comparison pair per deleted edge, drawn with replacement from its candidate set."""
    universes = [
        sorted(candidates) if candidates else range(num_nodes)
        for _, candidates in sorted(candidate_sets.items())
    ]
    return _draw_pairs(universes, seed)


def _pooled_pair_distance(
    embeddings: torch.Tensor,
    reference_embeddings: torch.Tensor,
    edges: Sequence[Edge],
    pairs: Sequence[Pair],
) -> torch.Tensor:
    deleted = concat_cols(gather_rows(embeddings, [u for u, _ in edges]), gather_rows(embeddings, [v for _, v in edges]))
    compared = concat_cols(
        gather_rows(reference_embeddings, [p for p, _ in pairs]),
        gather_rows(reference_embeddings, [q for _, q in pairs]),
    )
    return mse(deleted.mean(dim=0, keepdim=True), compared.mean(dim=0, keepdim=True))


def loss_dec_baseline(
    embeddings: torch.Tensor,
    reference: FrozenReference,
    edges: Iterable[Edge],
    seed: int,
    pair_count: Optional[int] = None,
    pairs: Optional[Sequence[Pair]] = None,
) -> torch.Tensor:
    """
    MSE between the mean deleted-edge representation and the mean of random node pairs.

    ``pair_count`` defaults to the number of deleted edges.
    """
    edges = sorted(edges)
    if not edges:
        raise ContractError("deleted edge set is empty")
    if pairs is None:
        pairs = sample_random_pairs(reference.embeddings.shape[0], pair_count or len(edges), seed)
    return _pooled_pair_distance(embeddings, reference.embeddings, edges, pairs)


def loss_eu(
    embeddings: torch.Tensor,
    reference: FrozenReference,
    candidate_sets: Mapping[Edge, Optional[frozenset[int]]],
    seed: int,
    kl_cap: Optional[float] = None,
) -> torch.Tensor:
    """
    Deleted-edge consistency against pairs drawn from each edge's common k-hop neighbors.
    """
    if not candidate_sets:
        raise ContractError("deleted edge set is empty")
    edges = sorted(candidate_sets)
    pairs = sample_candidate_pairs(candidate_sets, reference.embeddings.shape[0], seed)
    value = _pooled_pair_distance(embeddings, reference.embeddings, edges, pairs)
    return value.clamp(max=kl_cap) if kl_cap is not None else value


def loss_fu(
    probabilities: torch.Tensor,
    edge_free: torch.Tensor,
    nodes: Iterable[int],
    kl_cap: float,
    ceiling: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """
    −mean over nodes of min(KL(y′_u ‖ ŷ_u), kl_cap); minimising it pushes ŷ away from y′.

    ``ceiling`` holds an optional per-node limit (one entry per graph node)
    below kl_cap; a node at its limit contributes no gradient.
    """
    nodes = sorted(set(nodes))
    if not nodes:
        raise ContractError("feature unlearning needs at least one node")
    divergence = kl_divergence(edge_free, probabilities, nodes, reduction="none")
    limit = torch.full_like(divergence, kl_cap)
    if ceiling is not None:
        limit = torch.minimum(limit, ceiling.detach()[nodes])
    return -torch.minimum(divergence, limit).mean()


def loss_nu(
    embeddings: torch.Tensor,
    probabilities: torch.Tensor,
    reference: FrozenReference,
    candidate_sets: Mapping[Edge, Optional[frozenset[int]]],
    nodes: Iterable[int],
    alpha: float,
    kl_cap: float,
    seed: int,
    saturate: bool = False,
) -> torch.Tensor:
    """
    Node unlearning as edge plus feature unlearning: alpha·L_EU + L_FU.

    Deleted nodes without incident edges contribute no edge term.
    """
    nodes = sorted(set(nodes))
    if not nodes:
        raise ContractError("node unlearning needs at least one node")
    ceiling = reference.feature_ceiling if saturate else None
    value = loss_fu(probabilities, reference.edge_free, nodes, kl_cap, ceiling)
    if candidate_sets and alpha > 0:
        value = value + alpha * loss_eu(embeddings, reference, candidate_sets, seed, kl_cap)
    return value


def loss_an(logits: torch.Tensor, reference: FrozenReference, nodes: Iterable[int],
            kl_cap: Optional[float] = None) -> torch.Tensor:
    """Cross-entropy against the frozen pseudo-labels on the selected neighbors; 0 when none are selected."""
    nodes = sorted(set(nodes))
    if not nodes:
        return logits.new_zeros(())
    value = cross_entropy(logits, reference.pseudo_labels, nodes)
    return value.clamp(max=kl_cap) if kl_cap is not None else value


def reverse_ce_baseline(logits: torch.Tensor, reference: FrozenReference, nodes: Iterable[int],
                        kl_cap: float) -> torch.Tensor:
    """Negated per-node cross-entropy against the pseudo-labels, each capped at kl_cap."""
    nodes = sorted(set(nodes))
    if not nodes:
        raise ContractError("reverse cross-entropy needs at least one node")
    per_node = cross_entropy(logits, reference.pseudo_labels, nodes, reduction="none")
    return -per_node.clamp(max=kl_cap).mean()
