from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
import torch

from agu.graph.graph import Graph
from agu.models.gnn import GNN, forward
from agu.numeric.optim import build_optimizer, optimizer_step
from agu.numeric.tensor import backward, cross_entropy, row_softmax
from agu.utils.exceptions import EmptySetError, TrainingDivergenceError
from agu.utils.seeding import derive_seed

if TYPE_CHECKING:
    from agu.schemas.config import TrainConfig

logger = logging.getLogger(__name__)


@dataclass
class TrainResult:
    model: GNN
    losses: list[float] = field(default_factory=list)
    train_accuracy: float = 0.0


@dataclass(frozen=True)
class Prediction:
    labels: np.ndarray
    probabilities: torch.Tensor


def train(model: GNN, graph: Graph, cfg: "TrainConfig") -> TrainResult:
    """
    Minimise cross-entropy on the train mask with Adam, in place.

    Dropout randomness is seeded from cfg.seed inside a forked RNG so the
    global torch state is left untouched. Zero epochs leave the parameters
    at their initial values.

    Raises:
        EmptySetError: the train mask is empty
        TrainingDivergenceError: the loss became NaN or infinite
    """
    nodes = graph.train_nodes()
    if not nodes:
        raise EmptySetError("train mask is empty")

    result = TrainResult(model=model)
    if cfg.epochs > 0:
        model.dropout = cfg.dropout
        optimizer = build_optimizer(model.parameters(), cfg.lr, cfg.weight_decay)
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(derive_seed(cfg.seed, "dropout"))
            model.train()
            try:
                for epoch in range(cfg.epochs):
                    optimizer.zero_grad()
                    loss = cross_entropy(forward(model, graph).logits, graph.label_tensor, nodes)
                    if not torch.isfinite(loss):
                        raise TrainingDivergenceError(f"training loss is {loss.item()} at epoch {epoch}", epoch=epoch)
                    backward(loss)
                    optimizer_step(optimizer)
                    result.losses.append(loss.item())
                    logger.debug(f"epoch {epoch}: loss {loss.item():.6f}")
            finally:
                model.eval()

    result.train_accuracy = accuracy(model, graph, nodes)
    logger.info(
        f"Trained {model.arch.value} for {cfg.epochs} epochs, train accuracy {result.train_accuracy:.4f}"
    )
    return result


def predict(model: GNN, graph: Graph) -> Prediction:
    """Argmax labels and row-softmax probabilities in deterministic mode."""
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            probabilities = row_softmax(forward(model, graph).logits)
    finally:
        model.train(was_training)
    return Prediction(labels=probabilities.argmax(dim=1).numpy(), probabilities=probabilities)


def accuracy(model: GNN, graph: Graph, nodes: list[int]) -> float:
    if not nodes:
        return 0.0
    labels = predict(model, graph).labels
    return float(np.mean(labels[nodes] == graph.labels[nodes]))
