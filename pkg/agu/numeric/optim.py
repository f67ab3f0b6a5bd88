from typing import Iterable

import torch

from agu.utils.exceptions import DimensionError, DomainError

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


def build_optimizer(params: Iterable[torch.nn.Parameter], lr: float, weight_decay: float = 0.0) -> torch.optim.Adam:
    """Adam with one moment slot per parameter, created lazily on the first step."""
    return torch.optim.Adam(params, lr=lr, betas=ADAM_BETAS, eps=ADAM_EPS, weight_decay=weight_decay)


def optimizer_step(optimizer: torch.optim.Optimizer) -> None:
    """Apply one in-place update from the accumulated gradients."""
    for group in optimizer.param_groups:
        for param in group["params"]:
            if param.grad is None:
                continue
            if param.grad.shape != param.shape:
                raise DimensionError(
                    f"gradient shape {tuple(param.grad.shape)} does not match parameter {tuple(param.shape)}"
                )
            if not torch.isfinite(param.grad).all():
                raise DomainError("gradient contains NaN or infinite entries")
    optimizer.step()
