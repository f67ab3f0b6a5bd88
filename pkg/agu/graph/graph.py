"""
Graph storage, unlearning requests and structural queries.

A Graph is immutable: every edit returns a new Graph. Node indices are
stable across edits, deleted nodes stay behind as isolated placeholders with
zeroed feature rows.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
import torch
from scipy.sparse.csgraph import dijkstra

from agu.numeric.tensor import DTYPE, SparseMatrix
from agu.utils.exceptions import (
    ConfigError,
    ContractError,
    DimensionError,
    GraphReferenceError,
    IsolatedPairError,
)

logger = logging.getLogger(__name__)

Edge = tuple[int, int]


def canonical_edge(u: int, v: int) -> Edge:
    u, v = int(u), int(v)
    return (u, v) if u <= v else (v, u)


class RequestKind(str, Enum):
    NODE = "node"
    EDGE = "edge"
    FEATURE = "feature"


@dataclass(frozen=True)
class UnlearnRequest:
    """
    Deletion request: nodes, undirected edges, or full feature rows.
    """
    kind: RequestKind
    node_ids: frozenset[int] = frozenset()
    edge_list: frozenset[Edge] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "kind", RequestKind(self.kind))
        object.__setattr__(self, "node_ids", frozenset(int(v) for v in self.node_ids))
        object.__setattr__(self, "edge_list", frozenset(canonical_edge(u, v) for u, v in self.edge_list))
        if self.kind is RequestKind.EDGE and self.node_ids:
            raise ContractError("edge requests carry edges only")
        if self.kind is not RequestKind.EDGE and self.edge_list:
            raise ContractError(f"{self.kind.value} requests carry node ids only")

    @classmethod
    def nodes(cls, node_ids: Iterable[int]) -> "UnlearnRequest":
        return cls(RequestKind.NODE, node_ids=frozenset(node_ids))

    @classmethod
    def edges(cls, pairs: Iterable[Sequence[int]]) -> "UnlearnRequest":
        return cls(RequestKind.EDGE, edge_list=frozenset(canonical_edge(u, v) for u, v in pairs))

    @classmethod
    def features(cls, node_ids: Iterable[int]) -> "UnlearnRequest":
        return cls(RequestKind.FEATURE, node_ids=frozenset(node_ids))

    @property
    def is_empty(self) -> bool:
        return not self.node_ids and not self.edge_list

    def sorted_nodes(self) -> list[int]:
        return sorted(self.node_ids)

    def sorted_edges(self) -> list[Edge]:
        return sorted(self.edge_list)


@dataclass(frozen=True, eq=False)
class Graph:
    """
    Undirected attributed graph with a symmetric binary CSR adjacency.
    """
    features: np.ndarray
    adjacency: sp.csr_matrix
    labels: np.ndarray
    train_mask: np.ndarray
    test_mask: np.ndarray
    num_classes: int

    def __post_init__(self):
        features = np.ascontiguousarray(self.features, dtype=np.float64)
        if features.ndim != 2:
            raise DimensionError("features must be an n x d matrix")
        n = features.shape[0]
        adjacency = sp.csr_matrix(self.adjacency, dtype=np.float64)
        adjacency.eliminate_zeros()
        adjacency.sort_indices()
        if adjacency.shape != (n, n):
            raise DimensionError(f"adjacency shape {adjacency.shape} does not match {n} nodes")
        if adjacency.diagonal().any():
            raise ContractError("self-loops are not stored in the adjacency")
        if adjacency.nnz and np.any(adjacency.data != 1.0):
            raise ContractError("adjacency must be binary without duplicate edges")
        if (adjacency != adjacency.T).nnz:
            raise ContractError("adjacency must be symmetric")
        labels = np.asarray(self.labels, dtype=np.int64)
        train_mask = np.asarray(self.train_mask, dtype=bool)
        test_mask = np.asarray(self.test_mask, dtype=bool)
        if labels.shape != (n,) or train_mask.shape != (n,) or test_mask.shape != (n,):
            raise DimensionError("labels and masks need one entry per node")
        if n and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ContractError(f"labels must lie in [0, {self.num_classes})")
        if np.any(train_mask & test_mask):
            raise ContractError("train and test masks overlap")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "adjacency", adjacency)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "train_mask", train_mask)
        object.__setattr__(self, "test_mask", test_mask)

    @classmethod
    def from_edges(
        cls,
        num_nodes: int,
        edges: Iterable[Sequence[int]],
        features: Optional[np.ndarray] = None,
        labels: Optional[np.ndarray] = None,
        train_mask: Optional[np.ndarray] = None,
        test_mask: Optional[np.ndarray] = None,
        num_classes: Optional[int] = None,
    ) -> "Graph":
        pairs = [canonical_edge(u, v) for u, v in edges]
        for u, v in pairs:
            if u == v:
                raise ContractError(f"self-loop on node {u}")
            if u < 0 or v >= num_nodes:
                raise GraphReferenceError(f"edge ({u}, {v}) references a node outside [0, {num_nodes})")
        if len(set(pairs)) != len(pairs):
            raise ContractError("duplicate edges")
        adjacency = _symmetric_adjacency(num_nodes, pairs)
        if features is None:
            features = np.eye(num_nodes)
        if labels is None:
            labels = np.zeros(num_nodes, dtype=np.int64)
        if num_classes is None:
            num_classes = int(np.max(labels)) + 1 if num_nodes else 1
        if train_mask is None:
            train_mask = np.ones(num_nodes, dtype=bool)
        if test_mask is None:
            test_mask = np.zeros(num_nodes, dtype=bool)
        return cls(features, adjacency, labels, train_mask, test_mask, int(num_classes))

    @property
    def n(self) -> int:
        return int(self.features.shape[0])

    @property
    def d(self) -> int:
        return int(self.features.shape[1])

    @property
    def num_edges(self) -> int:
        return int(self.adjacency.nnz // 2)

    @cached_property
    def feature_tensor(self) -> torch.Tensor:
        return torch.from_numpy(self.features).to(DTYPE)

    @cached_property
    def label_tensor(self) -> torch.Tensor:
        return torch.from_numpy(self.labels)

    def edges(self) -> list[Edge]:
        upper = sp.triu(self.adjacency, k=1).tocoo()
        return sorted(zip(upper.row.tolist(), upper.col.tolist()))

    def has_edge(self, u: int, v: int) -> bool:
        return bool(self.adjacency[u, v])

    def neighbors(self, v: int) -> np.ndarray:
        return self.adjacency.indices[self.adjacency.indptr[v]:self.adjacency.indptr[v + 1]]

    def train_nodes(self) -> list[int]:
        return np.flatnonzero(self.train_mask).tolist()

    def test_nodes(self) -> list[int]:
        return np.flatnonzero(self.test_mask).tolist()

    def _replace(self, **changes) -> "Graph":
        values = dict(
            features=self.features,
            adjacency=self.adjacency,
            labels=self.labels,
            train_mask=self.train_mask,
            test_mask=self.test_mask,
            num_classes=self.num_classes,
        )
        values.update(changes)
        return Graph(**values)

    def with_edges_removed(self, removed: Iterable[Edge]) -> "Graph":
        removed = {canonical_edge(u, v) for u, v in removed}
        kept = [e for e in self.edges() if e not in removed]
        return self._replace(adjacency=_symmetric_adjacency(self.n, kept))

    def with_edges_added(self, added: Iterable[Edge]) -> "Graph":
        pairs = sorted(set(self.edges()) | {canonical_edge(u, v) for u, v in added})
        if any(u == v for u, v in pairs):
            raise ContractError("cannot add a self-loop")
        return self._replace(adjacency=_symmetric_adjacency(self.n, pairs))

    def without_edges(self) -> "Graph":
        return self._replace(adjacency=sp.csr_matrix((self.n, self.n), dtype=np.float64))

    def with_feature_rows_zeroed(self, nodes: Iterable[int]) -> "Graph":
        features = self.features.copy()
        features[sorted(nodes)] = 0.0
        return self._replace(features=features)

    def without_mask_entries(self, nodes: Iterable[int]) -> "Graph":
        index = sorted(nodes)
        train_mask = self.train_mask.copy()
        test_mask = self.test_mask.copy()
        train_mask[index] = False
        test_mask[index] = False
        return self._replace(train_mask=train_mask, test_mask=test_mask)

    def permuted(self, perm: Sequence[int]) -> "Graph":
        """Relabel nodes so that old node ``perm[i]`` becomes node ``i``."""
        perm = np.asarray(perm, dtype=np.int64)
        adjacency = self.adjacency[perm][:, perm]
        return self._replace(
            features=self.features[perm],
            adjacency=adjacency,
            labels=self.labels[perm],
            train_mask=self.train_mask[perm],
            test_mask=self.test_mask[perm],
        )


def _symmetric_adjacency(num_nodes: int, pairs: Sequence[Edge]) -> sp.csr_matrix:
    if not pairs:
        return sp.csr_matrix((num_nodes, num_nodes), dtype=np.float64)
    src = np.fromiter((u for u, _ in pairs), dtype=np.int64, count=len(pairs))
    dst = np.fromiter((v for _, v in pairs), dtype=np.int64, count=len(pairs))
    rows = np.concatenate([src, dst])
    cols = np.concatenate([dst, src])
    data = np.ones(len(rows), dtype=np.float64)
    return sp.csr_matrix((data, (rows, cols)), shape=(num_nodes, num_nodes))


@dataclass(frozen=True, eq=False)
class GraphDelta:
    """
    The remaining graph after a request, plus what was taken out of it.
    """
    remaining: Graph
    removed_edges: frozenset[Edge] = field(default_factory=frozenset)
    removed_nodes: frozenset[int] = field(default_factory=frozenset)
    zeroed_feature_rows: frozenset[int] = field(default_factory=frozenset)


def _check_references(g: Graph, r: UnlearnRequest) -> None:
    for v in r.node_ids:
        if not 0 <= v < g.n:
            raise GraphReferenceError(f"node {v} is not in the graph (n={g.n})")
    for u, v in r.edge_list:
        if u == v:
            raise GraphReferenceError(f"({u}, {v}) is a self-loop, not an edge")
        if u < 0 or v >= g.n:
            raise GraphReferenceError(f"edge ({u}, {v}) references a node outside [0, {g.n})")


def validate_request(g: Graph, r: UnlearnRequest) -> None:
    """
    Check that a request is non-empty and every element it names exists in g.
    """
    if r.is_empty:
        raise ContractError("unlearning request removes nothing")
    _check_references(g, r)
    missing = [e for e in r.sorted_edges() if not g.has_edge(*e)]
    if missing:
        raise GraphReferenceError(f"edges not in the graph: {missing[:5]}")


def incident_edges(g: Graph, nodes: Iterable[int]) -> frozenset[Edge]:
    found = set()
    for v in nodes:
        for u in g.neighbors(v).tolist():
            found.add(canonical_edge(u, v))
    return frozenset(found)


def apply_request(g: Graph, r: UnlearnRequest) -> GraphDelta:
    """
    Build the remaining graph for a request.

    Node requests isolate the nodes and zero their features, edge requests
    drop both directions of each edge, feature requests zero whole rows.
    Removing an edge that is already absent is a no-op.
    """
    _check_references(g, r)
    if r.kind is RequestKind.NODE:
        removed = incident_edges(g, r.node_ids)
        remaining = (
            g.with_edges_removed(removed)
            .with_feature_rows_zeroed(r.node_ids)
            .without_mask_entries(r.node_ids)
        )
        return GraphDelta(remaining, removed_edges=removed, removed_nodes=r.node_ids,
                          zeroed_feature_rows=r.node_ids)
    if r.kind is RequestKind.EDGE:
        removed = frozenset(e for e in r.edge_list if g.has_edge(*e))
        return GraphDelta(g.with_edges_removed(removed), removed_edges=removed)
    return GraphDelta(g.with_feature_rows_zeroed(r.node_ids), zeroed_feature_rows=r.node_ids)


def degrees(g: Graph) -> np.ndarray:
    return np.diff(g.adjacency.indptr).astype(np.int64)


def hop_distances(g: Graph, sources: Iterable[int], cutoff: Optional[int] = None) -> np.ndarray:
    """
    Shortest hop count from the nearest source to every node (inf when unreachable or beyond cutoff).
    """
    sources = sorted(set(int(s) for s in sources))
    if not sources:
        return np.full(g.n, np.inf)
    limit = np.inf if cutoff is None else float(cutoff)
    distances = dijkstra(g.adjacency, directed=False, indices=sources, unweighted=True,
                         limit=limit, min_only=True)
    return np.asarray(distances, dtype=np.float64)


def k_hop_set(g: Graph, v: int, k: int) -> frozenset[int]:
    """Nodes at distance 1..k from v."""
    if k < 1:
        raise ConfigError(f"k must be at least 1, got {k}")
    distances = hop_distances(g, [v], cutoff=k)
    return frozenset(np.flatnonzero((distances > 0) & (distances <= k)).tolist())


def candidate_pairs(g: Graph, u: int, v: int, k: int) -> frozenset[int]:
    """
    Comparison nodes for a deleted edge: common k-hop neighbors of u and v,
    or the union when fewer than two are shared.
    """
    if u == v:
        raise ContractError("candidate_pairs needs two distinct endpoints")
    around_u = k_hop_set(g, u, k)
    around_v = k_hop_set(g, v, k)
    common = (around_u & around_v) - {u, v}
    if len(common) >= 2:
        return common
    union = (around_u | around_v) - {u, v}
    if not union:
        raise IsolatedPairError(u, v)
    return union


def normalize_adjacency(adjacency: sp.spmatrix, self_loops: bool) -> SparseMatrix:
    """D^{-1/2} (A [+ I]) D^{-1/2}; rows of degree-zero nodes stay zero."""
    matrix = sp.csr_matrix(adjacency, dtype=np.float64)
    if self_loops:
        matrix = matrix + sp.identity(matrix.shape[0], dtype=np.float64, format="csr")
    degree = np.asarray(matrix.sum(axis=1)).ravel()
    inv_sqrt = np.zeros_like(degree)
    positive = degree > 0
    inv_sqrt[positive] = 1.0 / np.sqrt(degree[positive])
    scaling = sp.diags(inv_sqrt)
    return SparseMatrix.from_scipy(scaling @ matrix @ scaling)


def normalized_adjacency(g: Graph, self_loops: bool) -> SparseMatrix:
    return normalize_adjacency(g.adjacency, self_loops)


def mean_adjacency(g: Graph) -> SparseMatrix:
    """Row-normalised adjacency D^{-1} A (empty neighborhoods average to zero)."""
    degree = degrees(g).astype(np.float64)
    inv = np.zeros_like(degree)
    inv[degree > 0] = 1.0 / degree[degree > 0]
    return SparseMatrix.from_scipy(sp.diags(inv) @ g.adjacency)


def adjacency_with_self_loops(g: Graph) -> SparseMatrix:
    return SparseMatrix.from_scipy(g.adjacency + sp.identity(g.n, dtype=np.float64, format="csr"))
