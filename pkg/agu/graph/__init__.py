from agu.graph.graph import (
    Edge,
    Graph,
    GraphDelta,
    RequestKind,
    UnlearnRequest,
    adjacency_with_self_loops,
    apply_request,
    candidate_pairs,
    canonical_edge,
    degrees,
    hop_distances,
    incident_edges,
    k_hop_set,
    mean_adjacency,
    normalize_adjacency,
    normalized_adjacency,
    validate_request,
)

__all__ = [
    "Edge",
    "Graph",
    "GraphDelta",
    "RequestKind",
    "UnlearnRequest",
    "adjacency_with_self_loops",
    "apply_request",
    "candidate_pairs",
    "canonical_edge",
    "degrees",
    "hop_distances",
    "incident_edges",
    "k_hop_set",
    "mean_adjacency",
    "normalize_adjacency",
    "normalized_adjacency",
    "validate_request",
]
