"""
GCN, SGC, GAT, GIN and GraphSAGE node classifiers built on the numeric core.

Every architecture maps ``dims = [d_in, hidden..., C]`` to K = len(dims) - 1
message-passing layers. Layers are followed by ReLU except the last. With
dropout disabled (eval mode) the forward pass is deterministic and the
output of node v depends on its K-hop ball only.
"""
from __future__ import annotations

import hashlib
import logging
import math
import weakref
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from agu.graph.graph import Graph, adjacency_with_self_loops, mean_adjacency, normalized_adjacency
from agu.numeric.tensor import (
    DTYPE,
    SparseMatrix,
    concat_cols,
    gather_rows,
    leaky_relu,
    matmul,
    relu,
    segment_softmax,
    segment_sum,
    spmm,
)
from agu.utils.exceptions import ConfigError, DimensionError
from agu.utils.seeding import torch_generator

logger = logging.getLogger(__name__)

GAT_NEGATIVE_SLOPE = 0.2


class Architecture(str, Enum):
    GCN = "gcn"
    SGC = "sgc"
    GAT = "gat"
    GIN = "gin"
    SAGE = "sage"

    @property
    def degree_based(self) -> bool:
        """Aggregation normalises by neighbor degrees."""
        return self in (Architecture.GCN, Architecture.SGC)


class ForwardOutput(NamedTuple):
    logits: torch.Tensor
    embeddings: torch.Tensor


@dataclass(frozen=True, eq=False)
class GraphOperators:
    """Propagation operators of one graph, built on first use."""
    graph: Graph

    @cached_property
    def gcn(self) -> SparseMatrix:
        return normalized_adjacency(self.graph, self_loops=True)

    @cached_property
    def mean(self) -> SparseMatrix:
        return mean_adjacency(self.graph)

    @cached_property
    def sum_with_self(self) -> SparseMatrix:
        return adjacency_with_self_loops(self.graph)

    @cached_property
    def attention_edges(self) -> tuple[torch.Tensor, torch.Tensor]:
        """(source, target) pairs of A + I in target-major CSR order."""
        matrix = self.sum_with_self
        target = np.repeat(np.arange(matrix.shape[0]), np.diff(matrix.indptr))
        return torch.from_numpy(matrix.indices.copy()), torch.from_numpy(target)


_OPERATORS: "weakref.WeakKeyDictionary[Graph, GraphOperators]" = weakref.WeakKeyDictionary()


def graph_operators(graph: Graph) -> GraphOperators:
    ops = _OPERATORS.get(graph)
    if ops is None:
        ops = GraphOperators(graph)
        _OPERATORS[graph] = ops
    return ops


class Dense(nn.Module):
    """h W + b with W stored as (in, out)."""

    def __init__(self, in_dim: int, out_dim: int, bias: bool = True):
        super().__init__()
        self.weight = nn.Parameter(torch.zeros(in_dim, out_dim, dtype=DTYPE))
        self.bias = nn.Parameter(torch.zeros(out_dim, dtype=DTYPE)) if bias else None

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        out = matmul(h, self.weight)
        return out + self.bias if self.bias is not None else out


class GNN(nn.Module):
    arch: Architecture

    def __init__(self, dims: Sequence[int], dropout: float = 0.0, seed: int = 0):
        super().__init__()
        if len(dims) < 2 or any(int(d) < 1 for d in dims):
            raise ConfigError(f"invalid dims {list(dims)}")
        self.dims = [int(d) for d in dims]
        self.dropout = float(dropout)
        self.seed = int(seed)

    @property
    def num_layers(self) -> int:
        return len(self.dims) - 1

    @property
    def deterministic(self) -> bool:
        return not self.training

    def _drop(self, h: torch.Tensor) -> torch.Tensor:
        if self.dropout > 0 and self.training:
            return F.dropout(h, p=self.dropout, training=True)
        return h

    def layer(self, index: int, h: torch.Tensor, ops: GraphOperators) -> torch.Tensor:
        raise NotImplementedError

    def forward(self, ops: GraphOperators) -> ForwardOutput:
        h = ops.graph.feature_tensor
        embeddings = h
        for index in range(self.num_layers):
            h = self.layer(index, self._drop(h), ops)
            if index < self.num_layers - 1:
                h = relu(h)
                embeddings = h
        return ForwardOutput(logits=h, embeddings=embeddings)


class GCN(GNN):
    """H' = Â H W with Â = D̃^{-1/2}(A + I)D̃^{-1/2}."""
    arch = Architecture.GCN

    def __init__(self, dims, dropout=0.0, seed=0):
        super().__init__(dims, dropout, seed)
        self.layers = nn.ModuleList(Dense(a, b) for a, b in zip(self.dims[:-1], self.dims[1:]))

    def layer(self, index, h, ops):
        dense = self.layers[index]
        return spmm(ops.gcn, matmul(h, dense.weight)) + dense.bias


class SGC(GNN):
    """Logits Â^K X W: K propagation steps, one linear map, no nonlinearity."""
    arch = Architecture.SGC

    def __init__(self, dims, dropout=0.0, seed=0):
        super().__init__(dims, dropout, seed)
        self.linear = Dense(self.dims[0], self.dims[-1])

    def forward(self, ops: GraphOperators) -> ForwardOutput:
        h = ops.graph.feature_tensor
        for _ in range(self.num_layers):
            h = spmm(ops.gcn, h)
        logits = self.linear(self._drop(h))
        # SGC has no hidden layer; its logits are its representation.
        return ForwardOutput(logits=logits, embeddings=logits)


class GATLayer(nn.Module):
    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.linear = Dense(in_dim, out_dim)
        self.attention = nn.Parameter(torch.zeros(2 * out_dim, 1, dtype=DTYPE))

    def forward(self, h: torch.Tensor, ops: GraphOperators) -> torch.Tensor:
        source, target = ops.attention_edges
        wh = matmul(h, self.linear.weight)
        pair = concat_cols(gather_rows(wh, target), gather_rows(wh, source))
        scores = leaky_relu(matmul(pair, self.attention), GAT_NEGATIVE_SLOPE).squeeze(1)
        alpha = segment_softmax(scores, target, wh.shape[0])
        messages = alpha.unsqueeze(1) * gather_rows(wh, source)
        return segment_sum(messages, target, wh.shape[0]) + self.linear.bias


class GAT(GNN):
    """Single-head attention over neighbors ∪ self."""
    arch = Architecture.GAT

    def __init__(self, dims, dropout=0.0, seed=0):
        super().__init__(dims, dropout, seed)
        self.layers = nn.ModuleList(GATLayer(a, b) for a, b in zip(self.dims[:-1], self.dims[1:]))

    def layer(self, index, h, ops):
        return self.layers[index](h, ops)


class GINLayer(nn.Module):
    def __init__(self, in_dim: int, mlp_dim: int, out_dim: int):
        super().__init__()
        self.first = Dense(in_dim, mlp_dim)
        self.second = Dense(mlp_dim, out_dim)

    def forward(self, h: torch.Tensor, ops: GraphOperators) -> torch.Tensor:
        # (1 + eps) h_v + sum of neighbors, eps fixed at 0
        aggregated = spmm(ops.sum_with_self, h)
        return self.second(relu(self.first(aggregated)))


class GIN(GNN):
    arch = Architecture.GIN

    def __init__(self, dims, dropout=0.0, seed=0):
        super().__init__(dims, dropout, seed)
        mlp_dim = self.dims[1] if len(self.dims) > 2 else self.dims[-1]
        self.layers = nn.ModuleList(
            GINLayer(a, mlp_dim, b) for a, b in zip(self.dims[:-1], self.dims[1:])
        )

    def layer(self, index, h, ops):
        return self.layers[index](h, ops)


class SAGELayer(nn.Module):
    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.self_linear = Dense(in_dim, out_dim)
        self.neighbor_linear = Dense(in_dim, out_dim, bias=False)

    def forward(self, h: torch.Tensor, ops: GraphOperators) -> torch.Tensor:
        return self.self_linear(h) + self.neighbor_linear(spmm(ops.mean, h))


class SAGE(GNN):
    """GraphSAGE with the mean aggregator."""
    arch = Architecture.SAGE

    def __init__(self, dims, dropout=0.0, seed=0):
        super().__init__(dims, dropout, seed)
        self.layers = nn.ModuleList(SAGELayer(a, b) for a, b in zip(self.dims[:-1], self.dims[1:]))

    def layer(self, index, h, ops):
        return self.layers[index](h, ops)


MODEL_CLASSES: dict[Architecture, type[GNN]] = {
    Architecture.GCN: GCN,
    Architecture.SGC: SGC,
    Architecture.GAT: GAT,
    Architecture.GIN: GIN,
    Architecture.SAGE: SAGE,
}


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


def init_model(arch: Architecture | str, dims: Sequence[int], seed: int, dropout: float = 0.0) -> GNN:
    """
    Build a model with Glorot-uniform weights and zero biases.

    The same (arch, dims, seed) always yields bitwise-identical parameters.
    The model starts in deterministic (eval) mode.
    """
    arch = Architecture(arch)
    model = MODEL_CLASSES[arch](dims, dropout=dropout, seed=seed)
    generator = torch_generator(seed)
    with torch.no_grad():
        for name, param in model.named_parameters():
            if param.dim() == 2:
                bound = glorot_bound(param.shape[0], param.shape[1])
                param.copy_((torch.rand(param.shape, generator=generator, dtype=DTYPE) * 2.0 - 1.0) * bound)
            else:
                param.zero_()
    model.eval()
    logger.debug(f"Initialised {arch.value} model dims={model.dims} seed={seed}")
    return model


def forward(model: GNN, graph: Graph) -> ForwardOutput:
    if graph.d != model.dims[0]:
        raise DimensionError(f"graph has {graph.d} features, model expects {model.dims[0]}")
    return model(graph_operators(graph))


def parameter_checksum(model: nn.Module) -> str:
    digest = hashlib.sha256()
    for name, param in model.state_dict().items():
        digest.update(name.encode("utf-8"))
        digest.update(param.detach().cpu().numpy().astype("<f8").tobytes())
    return digest.hexdigest()
