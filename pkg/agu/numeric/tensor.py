"""
Float64 tensor operations with reverse-mode gradients.

Dense tensors are plain ``torch.Tensor`` values in float64; the autograd graph
recorded by torch is the tape. Sparse operands are CSR matrices whose product
with a dense tensor accumulates in CSR index order, so results are
reproducible bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Literal, Sequence

import numpy as np
import scipy.sparse as sp
import torch
import torch.nn.functional as F

from agu.utils.exceptions import ContractError, DimensionError, DomainError, EmptySetError

DTYPE = torch.float64
KL_FLOOR = 1e-10
DISTRIBUTION_TOLERANCE = 1e-6

Reduction = Literal["mean", "none"]


def as_tensor(values, requires_grad: bool = False) -> torch.Tensor:
    """Convert array-like values to a float64 tensor."""
    if isinstance(values, torch.Tensor):
        tensor = values.detach().to(DTYPE).clone()
    else:
        tensor = torch.as_tensor(np.asarray(values, dtype=np.float64), dtype=DTYPE).clone()
    return tensor.requires_grad_(requires_grad)


def as_index(indices: Iterable[int] | torch.Tensor) -> torch.Tensor:
    if isinstance(indices, torch.Tensor):
        return indices.to(torch.long)
    if isinstance(indices, (set, frozenset)):
        indices = sorted(indices)
    return torch.as_tensor(list(indices), dtype=torch.long)


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """
    Immutable CSR matrix.

    Column indices are strictly increasing within each row and the row
    offsets end at the number of stored entries.
    """
    shape: tuple[int, int]
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray

    def __post_init__(self):
        rows, cols = self.shape
        if len(self.indptr) != rows + 1:
            raise DimensionError(f"indptr has length {len(self.indptr)}, expected {rows + 1}")
        if rows and self.indptr[0] != 0:
            raise ContractError("indptr must start at 0")
        if np.any(np.diff(self.indptr) < 0):
            raise ContractError("indptr must be monotone nondecreasing")
        if self.indptr[-1] != len(self.indices) or len(self.indices) != len(self.data):
            raise ContractError("last row offset must equal the number of stored entries")
        if len(self.indices) and (self.indices.min() < 0 or self.indices.max() >= cols):
            raise DimensionError("column index out of range")
        row_of = np.repeat(np.arange(rows), np.diff(self.indptr))
        same_row = row_of[1:] == row_of[:-1]
        if np.any(np.diff(self.indices)[same_row] <= 0):
            raise ContractError("column indices must be strictly increasing within each row")

    @classmethod
    def from_scipy(cls, matrix: sp.spmatrix) -> "SparseMatrix":
        csr = sp.csr_matrix(matrix, dtype=np.float64, copy=True)
        csr.sum_duplicates()
        csr.sort_indices()
        return cls(
            shape=(int(csr.shape[0]), int(csr.shape[1])),
            indptr=csr.indptr.astype(np.int64),
            indices=csr.indices.astype(np.int64),
            data=csr.data.astype(np.float64),
        )

    @classmethod
    def zeros(cls, shape: tuple[int, int]) -> "SparseMatrix":
        return cls(
            shape=shape,
            indptr=np.zeros(shape[0] + 1, dtype=np.int64),
            indices=np.zeros(0, dtype=np.int64),
            data=np.zeros(0, dtype=np.float64),
        )

    @cached_property
    def csr(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.data, self.indices, self.indptr), shape=self.shape)

    @property
    def nnz(self) -> int:
        return int(self.indptr[-1])

    def to_dense(self) -> torch.Tensor:
        return torch.from_numpy(self.csr.toarray())

    def transpose(self) -> "SparseMatrix":
        return SparseMatrix.from_scipy(self.csr.T)


class _SparseDenseProduct(torch.autograd.Function):
    """S @ D with gradient Sᵀ @ dC for the dense operand."""

    @staticmethod
    def forward(ctx, dense: torch.Tensor, matrix: SparseMatrix) -> torch.Tensor:
        ctx.matrix = matrix
        product = matrix.csr @ dense.detach().numpy()
        return torch.from_numpy(np.ascontiguousarray(product, dtype=np.float64))

    @staticmethod
    def backward(ctx, grad_output: torch.Tensor):
        grad = ctx.matrix.csr.T @ grad_output.detach().numpy()
        return torch.from_numpy(np.ascontiguousarray(grad, dtype=np.float64)), None


def _require_2d(name: str, t: torch.Tensor) -> None:
    if t.dim() != 2:
        raise DimensionError(f"{name} must be a matrix, got shape {tuple(t.shape)}")


def _require_same_shape(a: torch.Tensor, b: torch.Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {tuple(a.shape)} and {tuple(b.shape)} differ")


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _require_2d("a", a)
    _require_2d("b", b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: {tuple(a.shape)} x {tuple(b.shape)}")
    return a @ b


def spmm(s: SparseMatrix, d: torch.Tensor) -> torch.Tensor:
    _require_2d("d", d)
    if s.shape[1] != d.shape[0]:
        raise DimensionError(f"spmm: {s.shape} x {tuple(d.shape)}")
    if d.dtype != DTYPE:
        d = d.to(DTYPE)
    return _SparseDenseProduct.apply(d, s)


# Elementwise suite

def add(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _require_same_shape(a, b, "add")
    return a + b


def sub(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _require_same_shape(a, b, "sub")
    return a - b


def mul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _require_same_shape(a, b, "mul")
    return a * b


def scale(a: torch.Tensor, factor: float) -> torch.Tensor:
    return a * float(factor)


def relu(a: torch.Tensor) -> torch.Tensor:
    return torch.relu(a)


def leaky_relu(a: torch.Tensor, slope: float = 0.2) -> torch.Tensor:
    return F.leaky_relu(a, negative_slope=slope)


def exp(a: torch.Tensor) -> torch.Tensor:
    return torch.exp(a)


def log(a: torch.Tensor) -> torch.Tensor:
    if torch.any(a.detach() <= 0):
        raise DomainError("log requires strictly positive inputs")
    return torch.log(a)


def concat_cols(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _require_2d("a", a)
    _require_2d("b", b)
    if a.shape[0] != b.shape[0]:
        raise DimensionError(f"concat_cols: row counts {a.shape[0]} and {b.shape[0]} differ")
    return torch.cat([a, b], dim=1)


def gather_rows(t: torch.Tensor, indices: Iterable[int] | torch.Tensor) -> torch.Tensor:
    index = as_index(indices)
    if index.numel() and (index.min() < 0 or index.max() >= t.shape[0]):
        raise DimensionError(f"gather_rows: index out of range for {t.shape[0]} rows")
    return t.index_select(0, index)


def row_softmax(a: torch.Tensor) -> torch.Tensor:
    _require_2d("a", a)
    return torch.softmax(a, dim=1)


def row_log_softmax(a: torch.Tensor) -> torch.Tensor:
    _require_2d("a", a)
    return torch.log_softmax(a, dim=1)


def segment_softmax(scores: torch.Tensor, segment_ids: torch.Tensor, num_segments: int) -> torch.Tensor:
    """Softmax of ``scores`` computed independently within each segment."""
    segment_ids = segment_ids.to(torch.long)
    peak = torch.full((num_segments,), float("-inf"), dtype=scores.dtype)
    peak = peak.scatter_reduce(0, segment_ids, scores.detach(), reduce="amax", include_self=True)
    weights = torch.exp(scores - peak[segment_ids])
    totals = torch.zeros(num_segments, dtype=scores.dtype).index_add(0, segment_ids, weights)
    return weights / totals[segment_ids]


def segment_sum(values: torch.Tensor, segment_ids: torch.Tensor, num_segments: int) -> torch.Tensor:
    out = torch.zeros((num_segments,) + tuple(values.shape[1:]), dtype=values.dtype)
    return out.index_add(0, segment_ids.to(torch.long), values)


# Loss suite

def _rows(row_subset: Iterable[int] | torch.Tensor) -> torch.Tensor:
    index = as_index(row_subset)
    if index.numel() == 0:
        raise EmptySetError("loss row subset is empty")
    return index


def _reduce(values: torch.Tensor, reduction: Reduction) -> torch.Tensor:
    return values.mean() if reduction == "mean" else values


def check_distribution(p: torch.Tensor, name: str = "p") -> None:
    values = p.detach()
    if torch.any(values < 0):
        raise DomainError(f"{name} has negative entries")
    if torch.any((values.sum(dim=1) - 1.0).abs() > DISTRIBUTION_TOLERANCE):
        raise DomainError(f"{name} rows do not sum to 1")


def cross_entropy(
    logits: torch.Tensor,
    labels: torch.Tensor | Sequence[int],
    row_subset: Iterable[int] | torch.Tensor,
    reduction: Reduction = "mean",
) -> torch.Tensor:
    """Mean over the row subset of -log softmax(logits)[label]."""
    rows = _rows(row_subset)
    labels = torch.as_tensor(labels, dtype=torch.long)
    return F.cross_entropy(logits.index_select(0, rows), labels.index_select(0, rows), reduction=reduction)


def kl_divergence(
    p: torch.Tensor,
    q: torch.Tensor,
    row_subset: Iterable[int] | torch.Tensor,
    reduction: Reduction = "mean",
) -> torch.Tensor:
    """KL(p ‖ q) per row, with q floored at KL_FLOOR."""
    _require_same_shape(p, q, "kl_divergence")
    check_distribution(p, "p")
    check_distribution(q, "q")
    rows = _rows(row_subset)
    p_rows = p.index_select(0, rows)
    q_rows = q.index_select(0, rows)
    support = p_rows > 0
    safe_p = torch.where(support, p_rows, torch.ones_like(p_rows))
    terms = torch.where(
        support,
        p_rows * (torch.log(safe_p) - torch.log(q_rows.clamp_min(KL_FLOOR))),
        torch.zeros_like(p_rows),
    )
    return _reduce(terms.sum(dim=1), reduction)


def mse(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _require_same_shape(a, b, "mse")
    return ((a - b) ** 2).mean()


def backward(root: torch.Tensor) -> None:
    """Accumulate d(root)/d(leaf) into every leaf that requires a gradient."""
    if root.numel() != 1:
        raise ContractError(f"backward needs a scalar root, got shape {tuple(root.shape)}")
    if not root.requires_grad:
        raise ContractError("backward root was not produced by recorded operations")
    root.backward()
