from agu.numeric.optim import build_optimizer, optimizer_step
from agu.numeric.tensor import (
    DTYPE,
    KL_FLOOR,
    SparseMatrix,
    add,
    as_index,
    as_tensor,
    backward,
    concat_cols,
    cross_entropy,
    exp,
    gather_rows,
    kl_divergence,
    leaky_relu,
    log,
    matmul,
    mse,
    mul,
    relu,
    row_log_softmax,
    row_softmax,
    scale,
    segment_softmax,
    segment_sum,
    spmm,
    sub,
)

__all__ = [
    "DTYPE",
    "KL_FLOOR",
    "SparseMatrix",
    "add",
    "as_index",
    "as_tensor",
    "backward",
    "build_optimizer",
    "concat_cols",
    "cross_entropy",
    "exp",
    "gather_rows",
    "kl_divergence",
    "leaky_relu",
    "log",
    "matmul",
    "mse",
    "mul",
    "optimizer_step",
    "relu",
    "row_log_softmax",
    "row_softmax",
    "scale",
    "segment_softmax",
    "segment_sum",
    "spmm",
    "sub",
]
