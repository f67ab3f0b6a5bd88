from typing import Iterable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from sklearn.metrics import accuracy_score, f1_score

from agu.utils.exceptions import ContractError, EmptySetError

_F1_ACCURACY_TOLERANCE = 1e-12


def micro_f1(pred: Sequence[int], truth: Sequence[int], mask: Sequence[bool] | Iterable[int]) -> float:
    """
    Micro-averaged F1 over the masked nodes.

    ``mask`` is either a boolean vector or a list of node ids. For
    single-label prediction micro-F1 equals accuracy; a mismatch means the
    inputs are not single-label and raises ContractError.
    """
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    mask = np.asarray(list(mask) if not isinstance(mask, np.ndarray) else mask)
    index = np.flatnonzero(mask) if mask.dtype == bool else mask.astype(np.int64)
    if index.size == 0:
        raise EmptySetError("evaluation mask is empty")
    score = float(f1_score(truth[index], pred[index], average="micro"))
    accuracy = float(accuracy_score(truth[index], pred[index]))
    if abs(score - accuracy) > _F1_ACCURACY_TOLERANCE:
        raise ContractError(f"micro-F1 {score} differs from accuracy {accuracy}")
    return score


def mean_edge_similarity(embeddings: torch.Tensor, edges: Iterable[tuple[int, int]]) -> float:
    """Mean cosine similarity of endpoint embeddings."""
    edges = list(edges)
    if not edges:
        raise EmptySetError("no edges to compare")
    u = embeddings[[a for a, _ in edges]]
    v = embeddings[[b for _, b in edges]]
    return float(F.cosine_similarity(u, v, dim=1, eps=1e-12).mean())


def similarity_gap(embeddings: torch.Tensor, real_edges: Iterable[tuple[int, int]],
                   noisy_edges: Iterable[tuple[int, int]]) -> float:
    """Mean endpoint similarity of real edges minus that of injected edges."""
    with torch.no_grad():
        return mean_edge_similarity(embeddings, real_edges) - mean_edge_similarity(embeddings, noisy_edges)
