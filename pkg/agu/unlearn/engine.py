"""
Fine-tuning loops that turn a trained model into an unlearned one.
"""
from __future__ import annotations

import copy
import logging
import time
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Optional

import torch

from agu.graph.graph import Graph, GraphDelta, RequestKind, UnlearnRequest, apply_request, validate_request
from agu.models.gnn import GNN, ForwardOutput, forward
from agu.neighbors.analysis import NeighborReport, build_neighbor_report, element_nodes
from agu.numeric.optim import build_optimizer, optimizer_step
from agu.numeric.tensor import backward, row_softmax
from agu.unlearn.losses import (
    FrozenReference,
    edge_candidate_sets,
    loss_an,
    loss_dec_baseline,
    loss_eu,
    loss_fu,
    reverse_ce_baseline,
)
from agu.utils.exceptions import ContractError, UnlearnFailureError
from agu.utils.seeding import derive_seed

if TYPE_CHECKING:
    from agu.schemas.config import UnlearnConfig

logger = logging.getLogger(__name__)

# Loss term -> trace it is accumulated into
TRACE_GROUPS = {"eu": "ef", "fu": "ef", "reverse_ce": "ef", "dec": "ef", "an": "an"}

LossTerms = Callable[[ForwardOutput, int], dict[str, torch.Tensor]]


@dataclass
class UnlearnOutcome:
    model: GNN
    method: str
    traces: dict[str, list[float]] = field(default_factory=lambda: {"ef": [], "an": [], "total": []})
    # Per loss term, one value per epoch in which the term was active
    term_traces: dict[str, list[float]] = field(default_factory=dict)
    wall_time: float = 0.0
    report: Optional[NeighborReport] = None
    reference_checksums: list[str] = field(default_factory=list)
    remaining: Optional[Graph] = None


def _check_row_disjoint(loss_rows: frozenset[int], neighbor_rows: frozenset[int]) -> None:
    overlap = loss_rows & neighbor_rows
    if overlap:
        raise ContractError(f"neighbor loss rows overlap the unlearning rows: {sorted(overlap)[:5]}")


def _fine_tune(
    f_g: GNN,
    remaining: Graph,
    cfg: "UnlearnConfig",
    reference: FrozenReference,
    compute_terms: LossTerms,
    outcome: UnlearnOutcome,
) -> GNN:
    """
    Run cfg.epochs Adam steps on a copy of f_g in deterministic mode.

    Raises:
        UnlearnFailureError: a loss term became NaN or infinite
        ContractError: the frozen reference changed between epochs
    """
    f_hat = copy.deepcopy(f_g)
    f_hat.eval()
    optimizer = build_optimizer(f_hat.parameters(), cfg.lr)
    initial_checksum = reference.checksum()

    for epoch in range(cfg.epochs):
        optimizer.zero_grad()
        terms = compute_terms(forward(f_hat, remaining), derive_seed(cfg.seed, "pairs", epoch))
        for name, value in terms.items():
            if not torch.isfinite(value):
                raise UnlearnFailureError(name, epoch)

        grouped = {"ef": 0.0, "an": 0.0}
        total = None
        for name, value in terms.items():
            grouped[TRACE_GROUPS[name]] += value.item()
            outcome.term_traces.setdefault(name, []).append(value.item())
            total = value if total is None else total + value
        outcome.traces["ef"].append(grouped["ef"])
        outcome.traces["an"].append(grouped["an"])
        outcome.traces["total"].append(total.item() if total is not None else 0.0)

        if total is not None and total.requires_grad:
            backward(total)
            optimizer_step(optimizer)

        checksum = reference.checksum()
        if checksum != initial_checksum:
            raise ContractError(f"frozen reference changed at epoch {epoch}")
        outcome.reference_checksums.append(checksum)
        logger.debug(f"epoch {epoch}: " + ", ".join(f"{k}={v.item():.6f}" for k, v in terms.items()))
    return f_hat


def _prepare(g: Graph, request: UnlearnRequest) -> GraphDelta:
    validate_request(g, request)
    return apply_request(g, request)


def unlearn(f_g: GNN, g: Graph, request: UnlearnRequest, cfg: "UnlearnConfig") -> UnlearnOutcome:
    """
    Unlearn a request from f_g with the edge/feature/node objective plus the affected-neighbor term.

    f_g is left untouched; the returned outcome holds the fine-tuned copy.
    """
    started = time.perf_counter()
    delta = _prepare(g, request)
    report = build_neighbor_report(f_g, g, delta, request, cfg.filter)
    reference = FrozenReference.build(f_g, g)

    candidate_sets = {}
    if request.kind is not RequestKind.FEATURE and cfg.use_edge_term and delta.removed_edges:
        if cfg.use_homophily_pairs:
            exclude = delta.removed_nodes
            candidate_sets = edge_candidate_sets(g, delta.removed_edges, f_g.num_layers, exclude=exclude)
        else:
            candidate_sets = {edge: None for edge in sorted(delta.removed_edges)}
    feature_nodes = sorted(delta.zeroed_feature_rows) if cfg.use_feature_term else []
    edge_weight = cfg.alpha if request.kind is RequestKind.NODE else 1.0
    neighbor_rows = report.n_han if cfg.use_neighbor_term else frozenset()
    _check_row_disjoint(element_nodes(request, delta), neighbor_rows)
    ceiling = reference.feature_ceiling if cfg.saturate_feature_term else None

    def compute_terms(output: ForwardOutput, seed: int) -> dict[str, torch.Tensor]:
        terms = {}
        if candidate_sets and edge_weight > 0:
            terms["eu"] = edge_weight * loss_eu(output.embeddings, reference, candidate_sets, seed, cfg.kl_cap)
        if feature_nodes:
            terms["fu"] = loss_fu(row_softmax(output.logits), reference.edge_free, feature_nodes, cfg.kl_cap,
                                  ceiling)
        if neighbor_rows:
            terms["an"] = loss_an(output.logits, reference, neighbor_rows, cfg.kl_cap)
        return terms

    outcome = UnlearnOutcome(model=f_g, method="agu", report=report, remaining=delta.remaining)
    outcome.model = _fine_tune(f_g, delta.remaining, cfg, reference, compute_terms, outcome)
    outcome.wall_time = time.perf_counter() - started
    logger.info(
        f"Unlearned {request.kind.value} request ({len(request.node_ids) or len(request.edge_list)} elements) "
        f"in {cfg.epochs} epochs, {outcome.wall_time:.3f}s"
    )
    return outcome


def unlearn_reverse_ce(f_g: GNN, g: Graph, request: UnlearnRequest, cfg: "UnlearnConfig") -> UnlearnOutcome:
    """
    Baseline: push predictions on the unlearned rows away from f_g's labels.
    """
    started = time.perf_counter()
    delta = _prepare(g, request)
    reference = FrozenReference.build(f_g, g)
    if request.kind is RequestKind.EDGE:
        nodes = sorted({x for edge in delta.removed_edges for x in edge})
    else:
        nodes = sorted(element_nodes(request, delta))

    def compute_terms(output: ForwardOutput, seed: int) -> dict[str, torch.Tensor]:
        return {"reverse_ce": reverse_ce_baseline(output.logits, reference, nodes, cfg.kl_cap)}

    outcome = UnlearnOutcome(model=f_g, method="reverse_ce", remaining=delta.remaining)
    outcome.model = _fine_tune(f_g, delta.remaining, cfg, reference, compute_terms, outcome)
    outcome.wall_time = time.perf_counter() - started
    logger.info(f"Reverse cross-entropy unlearning finished in {outcome.wall_time:.3f}s")
    return outcome


def unlearn_dec(f_g: GNN, g: Graph, request: UnlearnRequest, cfg: "UnlearnConfig") -> UnlearnOutcome:
    """
    Baseline: deleted-edge consistency against uniformly random node pairs.

    Raises:
        ContractError: feature requests delete no edges
    """
    if request.kind is RequestKind.FEATURE:
        raise ContractError("edge-consistency unlearning does not apply to feature requests")
    started = time.perf_counter()
    delta = _prepare(g, request)
    reference = FrozenReference.build(f_g, g)
    edges = sorted(delta.removed_edges)

    def compute_terms(output: ForwardOutput, seed: int) -> dict[str, torch.Tensor]:
        if not edges:
            return {}
        return {"dec": loss_dec_baseline(output.embeddings, reference, edges, seed, cfg.random_pair_count)}

    outcome = UnlearnOutcome(model=f_g, method="dec_baseline", remaining=delta.remaining)
    outcome.model = _fine_tune(f_g, delta.remaining, cfg, reference, compute_terms, outcome)
    outcome.wall_time = time.perf_counter() - started
    logger.info(f"Edge-consistency unlearning finished in {outcome.wall_time:.3f}s")
    return outcome
