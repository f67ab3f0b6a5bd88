"""
Affected-neighbor identification, marginal-neighbor filtering and top-k selection.

Node sets are frozensets of node ids of the original graph. Element nodes of
a request (deleted nodes, zeroed feature rows) never appear in any of them.
"""
from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Optional

import numpy as np
import scipy.sparse as sp
import torch
import torch.nn.functional as F

from agu.graph.graph import Graph, GraphDelta, RequestKind, UnlearnRequest, hop_distances, k_hop_set, normalize_adjacency
from agu.models.gnn import GNN, Architecture, forward, init_model
from agu.numeric.tensor import gather_rows, spmm
from agu.schemas.reports import NeighborReportSchema, NeighborSummary
from agu.utils.exceptions import ConfigError, DimensionError, EmptySetError, ProbeAmbiguityError
from agu.utils.seeding import derive_seed, numpy_rng

if TYPE_CHECKING:
    from agu.schemas.config import FilterConfig

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-9


def propagation_delta(adjacency: sp.spmatrix, adjacency_hat: sp.spmatrix, features: torch.Tensor, k: int) -> torch.Tensor:
    """
    [(D̂^{-1/2} Â D̂^{-1/2})^k − (D^{-1/2} A D^{-1/2})^k] X by k sparse products per side.

    Normalisation is self-loop free.
    """
    if adjacency.shape != adjacency_hat.shape:
        raise DimensionError(f"adjacency shapes differ: {adjacency.shape} vs {adjacency_hat.shape}")
    if k < 1:
        raise ConfigError(f"k must be at least 1, got {k}")
    before = normalize_adjacency(adjacency, self_loops=False)
    after = normalize_adjacency(adjacency_hat, self_loops=False)
    with torch.no_grad():
        h, h_hat = features, features
        for _ in range(k):
            h = spmm(before, h)
            h_hat = spmm(after, h_hat)
        return h_hat - h


def affected_by_propagation(delta: torch.Tensor, remaining: Iterable[int], tol: float = DEFAULT_TOLERANCE) -> frozenset[int]:
    if tol < 0:
        raise ConfigError(f"tolerance must be non-negative, got {tol}")
    changed = delta.detach().abs().amax(dim=1) > tol if delta.shape[1] else torch.zeros(delta.shape[0], dtype=torch.bool)
    return frozenset(v for v in remaining if bool(changed[v]))


def element_nodes(request: UnlearnRequest, delta: GraphDelta) -> frozenset[int]:
    """Rows that belong to the removed elements themselves."""
    if request.kind is RequestKind.NODE:
        return delta.removed_nodes
    if request.kind is RequestKind.FEATURE:
        return delta.zeroed_feature_rows
    return frozenset()


def hop_sources(request: UnlearnRequest, delta: GraphDelta) -> frozenset[int]:
    if request.kind is RequestKind.EDGE:
        return frozenset(x for edge in request.edge_list for x in edge)
    return element_nodes(request, delta)


@dataclass(frozen=True)
class ProbeResult:
    nodes: frozenset[int]
    ambiguous: bool = False
    per_seed: tuple[frozenset[int], ...] = ()


def affected_by_probe(
    arch: Architecture | str,
    dims: list[int],
    graph: Graph,
    delta: GraphDelta,
    seed: int,
    tol: float = DEFAULT_TOLERANCE,
    exclude: Iterable[int] = (),
    num_seeds: int = 3,
    strict: bool = False,
) -> ProbeResult:
    """
    Nodes whose output under a randomly initialised model changes when the graph is edited.

    Several probe models are drawn from ``seed``; they must agree. On
    disagreement the union is used and the result is flagged ambiguous, or
    ProbeAmbiguityError is raised when ``strict``.
    """
    excluded = frozenset(exclude)
    candidates = [v for v in range(graph.n) if v not in excluded]
    found = []
    for index in range(num_seeds):
        probe = init_model(arch, dims, derive_seed(seed, "probe", index))
        with torch.no_grad():
            before = forward(probe, graph).logits
            after = forward(probe, delta.remaining).logits
        change = (after - before).abs().amax(dim=1)
        found.append(frozenset(v for v in candidates if float(change[v]) > tol))

    union = frozenset().union(*found)
    intersection = frozenset(found[0]).intersection(*found[1:])
    if union != intersection:
        disagreement = union - intersection
        message = f"probe models disagree on {len(disagreement)} nodes"
        if strict:
            raise ProbeAmbiguityError(message, disagreement=disagreement)
        logger.warning(f"{message}; using the union")
        return ProbeResult(union, ambiguous=True, per_seed=tuple(found))
    return ProbeResult(union, per_seed=tuple(found))


def perturbed_adjacency(
    graph: Graph,
    sources: Iterable[int],
    k: int,
    excluded_edges: Iterable[tuple[int, int]],
    seed: int,
) -> sp.csr_matrix:
    """
    A′: A with one random edge deleted inside the k-hop ball of each source node.

    Deletions accumulate on one shared copy. A source whose ball has no
    eligible edge is skipped, and edges in ``excluded_edges`` are never picked.
    """
    rng = numpy_rng(seed)
    excluded = set(excluded_edges)
    removed: set[tuple[int, int]] = set()
    all_edges = graph.edges()
    for v in sorted(set(sources)):
        ball = k_hop_set(graph, v, k) | {v}
        eligible = [e for e in all_edges if e[0] in ball and e[1] in ball and e not in excluded and e not in removed]
        if not eligible:
            continue
        removed.add(eligible[int(rng.integers(len(eligible)))])
    return graph.with_edges_removed(removed).adjacency


def marginal_filter(
    graph: Graph,
    delta: GraphDelta,
    request: UnlearnRequest,
    marginal: Iterable[int],
    k: int,
    theta: float,
    seed: int,
    perturbed: Optional[sp.spmatrix] = None,
) -> frozenset[int]:
    """
    Keep the marginal neighbors whose propagation change beats a random-deletion baseline by more than theta.

    Returns:
        The kept marginal neighbors. Non-marginal neighbors are not filtered
        and are not part of the result.
    """
    if theta < 0 or math.isnan(theta):
        raise ConfigError(f"theta must be non-negative, got {theta}")
    marginal = sorted(set(marginal))
    if not marginal:
        return frozenset()
    if perturbed is None:
        perturbed = perturbed_adjacency(graph, hop_sources(request, delta), k, delta.removed_edges,
                                        derive_seed(seed, "perturb"))
    features = graph.feature_tensor
    real = propagation_delta(graph.adjacency, delta.remaining.adjacency, features, k)
    noise = propagation_delta(graph.adjacency, perturbed, features, k)
    real_norm = torch.linalg.vector_norm(gather_rows(real, marginal), dim=1)
    noise_norm = torch.linalg.vector_norm(gather_rows(noise, marginal), dim=1)
    margin = real_norm - noise_norm
    return frozenset(v for v, m in zip(marginal, margin.tolist()) if m > theta)


def select_top_affected(
    model: GNN,
    graph: Graph,
    remaining: Graph,
    pool: Iterable[int],
    k_ans_fraction: float,
) -> tuple[frozenset[int], dict[int, float]]:
    """
    Rank the pool by 1 − cos(f_g(remaining)_v, f_g(graph)_v) on embeddings and keep the top ⌈fraction·|pool|⌉.

    Ties go to the smaller node id. Nodes with bitwise-unchanged embeddings score exactly 0.
    """
    nodes = sorted(set(pool))
    if not nodes:
        raise EmptySetError("candidate pool for selection is empty")
    if not 0 < k_ans_fraction <= 1:
        raise ConfigError(f"k_ans_fraction must be in (0, 1], got {k_ans_fraction}")
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            before = gather_rows(forward(model, graph).embeddings, nodes)
            after = gather_rows(forward(model, remaining).embeddings, nodes)
    finally:
        model.train(was_training)
    similarity = F.cosine_similarity(after, before, dim=1, eps=1e-12)
    unchanged = (after == before).all(dim=1)
    diff = torch.where(unchanged, torch.zeros_like(similarity), 1.0 - similarity)
    scores = {v: float(s) for v, s in zip(nodes, diff.tolist())}

    count = min(len(nodes), max(1, math.ceil(k_ans_fraction * len(nodes) - 1e-9)))
    ranked = sorted(nodes, key=lambda v: (-scores[v], v))
    return frozenset(ranked[:count]), scores


def hop_histogram(hops: np.ndarray, nodes: Iterable[int]) -> dict[str, int]:
    counts = Counter(int(hops[v]) if np.isfinite(hops[v]) else -1 for v in nodes)
    return {("inf" if hop < 0 else str(hop)): counts[hop] for hop in sorted(counts, key=lambda h: (h < 0, h))}


@dataclass
class NeighborReport:
    arch: Architecture
    num_layers: int
    kind: RequestKind
    n_aff: frozenset[int]
    n_ac: frozenset[int]
    marginal: frozenset[int]
    kept_marginal: frozenset[int]
    n_fmn: frozenset[int]
    n_han: frozenset[int]
    diff_scores: dict[int, float]
    hops: np.ndarray
    probe_ambiguous: bool = False
    config: dict = field(default_factory=dict)

    def summary(self) -> NeighborSummary:
        return NeighborSummary(
            n_aff=len(self.n_aff),
            n_ac=len(self.n_ac),
            marginal=len(self.marginal),
            kept_marginal=len(self.kept_marginal),
            n_fmn=len(self.n_fmn),
            n_han=len(self.n_han),
            probe_ambiguous=self.probe_ambiguous,
        )

    def to_schema(self) -> NeighborReportSchema:
        sets = {
            "n_aff": self.n_aff,
            "n_ac": self.n_ac,
            "marginal": self.marginal,
            "kept_marginal": self.kept_marginal,
            "n_fmn": self.n_fmn,
            "n_han": self.n_han,
        }
        return NeighborReportSchema(
            arch=self.arch.value,
            num_layers=self.num_layers,
            request_kind=self.kind.value,
            diff_scores={str(v): self.diff_scores[v] for v in sorted(self.diff_scores)},
            hop_histograms={name: hop_histogram(self.hops, nodes) for name, nodes in sets.items()},
            probe_ambiguous=self.probe_ambiguous,
            config=self.config,
            **{name: sorted(nodes) for name, nodes in sets.items()},
        )


def marginal_hop_limit(kind: RequestKind, num_layers: int) -> int:
    """Farthest hop a degree-free model can reach; degree-based models reach one further."""
    return num_layers - 1 if kind is RequestKind.EDGE else num_layers


def build_neighbor_report(
    model: GNN,
    graph: Graph,
    delta: GraphDelta,
    request: UnlearnRequest,
    cfg: "FilterConfig",
) -> NeighborReport:
    """
    Probe → marginal filter (degree-based models, structural requests) → top-k selection.
    """
    num_layers = model.num_layers
    elements = element_nodes(request, delta)
    candidates = [v for v in range(graph.n) if v not in elements]

    n_aff = affected_by_propagation(
        propagation_delta(graph.adjacency, delta.remaining.adjacency, graph.feature_tensor, num_layers),
        candidates,
        cfg.probe_tolerance,
    )
    probe = affected_by_probe(model.arch, model.dims, graph, delta, cfg.probe_seed, cfg.probe_tolerance,
                              exclude=elements, num_seeds=cfg.probe_seeds, strict=cfg.strict_probe)
    hops = hop_distances(graph, hop_sources(request, delta))

    marginal: frozenset[int] = frozenset()
    kept: frozenset[int] = frozenset()
    if model.arch.degree_based and request.kind is not RequestKind.FEATURE:
        limit = marginal_hop_limit(request.kind, num_layers)
        marginal = frozenset(v for v in probe.nodes if hops[v] > limit)
        if cfg.use_marginal_filter:
            kept = marginal_filter(graph, delta, request, marginal, num_layers, cfg.theta, cfg.probe_seed)
        else:
            kept = marginal
    pool = (probe.nodes - marginal) | kept

    n_han: frozenset[int] = frozenset()
    scores: dict[int, float] = {}
    if pool:
        fraction = cfg.k_ans_fraction if cfg.use_selection else 1.0
        n_han, scores = select_top_affected(model, graph, delta.remaining, pool, fraction)

    logger.info(
        f"Neighbors for {request.kind.value} request on {model.arch.value}: "
        f"{len(probe.nodes)} affected, {len(marginal)} marginal ({len(kept)} kept), {len(n_han)} selected"
    )
    return NeighborReport(
        arch=model.arch,
        num_layers=num_layers,
        kind=request.kind,
        n_aff=n_aff,
        n_ac=probe.nodes,
        marginal=marginal,
        kept_marginal=kept,
        n_fmn=pool,
        n_han=n_han,
        diff_scores=scores,
        hops=hops,
        probe_ambiguous=probe.ambiguous,
        config=cfg.model_dump(),
    )
