import numpy as np
import pytest
import scipy.sparse as sp
import torch
from torch.autograd import gradcheck

from agu.numeric import (
    SparseMatrix,
    add,
    as_tensor,
    backward,
    build_optimizer,
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
    optimizer_step,
    relu,
    row_log_softmax,
    row_softmax,
    scale,
    segment_softmax,
    segment_sum,
    spmm,
    sub,
)
from agu.utils.exceptions import ContractError, DimensionError, DomainError, EmptySetError

GRADCHECK = dict(eps=1e-5, atol=1e-6, rtol=1e-4)


def _random(shape, seed, requires_grad=True):
    generator = torch.Generator().manual_seed(seed)
    return torch.randn(shape, generator=generator, dtype=torch.float64).requires_grad_(requires_grad)


def _random_sparse(rows, cols, seed, density=0.3):
    return SparseMatrix.from_scipy(sp.random(rows, cols, density=density, random_state=seed, format="csr"))


def test_sparse_matrix_rejects_bad_offsets():
    """Test that CSR invariants are enforced."""
    with pytest.raises(DimensionError):
        SparseMatrix((2, 2), np.array([0, 1]), np.array([0]), np.array([1.0]))
    with pytest.raises(ContractError):
        SparseMatrix((2, 2), np.array([0, 2, 1]), np.array([0, 1]), np.array([1.0, 1.0]))
    with pytest.raises(ContractError):
        SparseMatrix((1, 3), np.array([0, 2]), np.array([2, 1]), np.array([1.0, 1.0]))


def test_spmm_matches_dense_product():
    """Test spmm against a dense matrix product."""
    matrix = _random_sparse(6, 5, seed=3)
    dense = _random((5, 4), seed=4, requires_grad=False)
    expected = matrix.to_dense() @ dense
    assert torch.allclose(spmm(matrix, dense), expected, atol=1e-12)


def test_spmm_of_zero_matrix_is_zero():
    dense = _random((3, 2), seed=0, requires_grad=False)
    assert torch.count_nonzero(spmm(SparseMatrix.zeros((4, 3)), dense)) == 0


def test_spmm_dimension_mismatch():
    with pytest.raises(DimensionError):
        spmm(_random_sparse(3, 3, seed=0), _random((4, 2), seed=0, requires_grad=False))


def test_spmm_is_bitwise_reproducible():
    matrix = _random_sparse(30, 30, seed=5)
    dense = _random((30, 7), seed=6, requires_grad=False)
    assert torch.equal(spmm(matrix, dense), spmm(matrix, dense))


def test_elementwise_shape_checks():
    a = _random((2, 3), seed=0, requires_grad=False)
    b = _random((3, 2), seed=1, requires_grad=False)
    for op in (add, sub, mul, mse):
        with pytest.raises(DimensionError):
            op(a, b)
    with pytest.raises(DimensionError):
        matmul(a, a)
    with pytest.raises(DimensionError):
        concat_cols(a, b)


def test_log_rejects_non_positive():
    with pytest.raises(DomainError):
        log(as_tensor([[1.0, 0.0]]))


def test_gather_rows_out_of_range():
    with pytest.raises(DimensionError):
        gather_rows(_random((3, 2), seed=0), [0, 3])


@pytest.mark.parametrize("seed", range(10))
def test_gradients_of_ops(seed):
    """Test every differentiable op against central finite differences."""
    rng = np.random.default_rng(seed)
    rows, inner, cols = (int(x) for x in rng.integers(2, 6, size=3))
    matrix = _random_sparse(rows, inner, seed=seed, density=0.5)
    a = _random((rows, inner), seed=seed)
    b = _random((inner, cols), seed=seed + 100)
    c = _random((rows, inner), seed=seed + 200)
    positive = (_random((rows, inner), seed=seed + 300, requires_grad=False).abs() + 0.5).requires_grad_(True)
    # Keep values away from the kinks of relu and leaky_relu
    kinked = (a.detach() + torch.sign(a.detach()) * 0.1).requires_grad_(True)

    assert gradcheck(lambda d: spmm(matrix, d), (b,), **GRADCHECK)
    assert gradcheck(matmul, (a, b), **GRADCHECK)
    assert gradcheck(add, (a, c), **GRADCHECK)
    assert gradcheck(sub, (a, c), **GRADCHECK)
    assert gradcheck(mul, (a, c), **GRADCHECK)
    assert gradcheck(lambda x: scale(x, 2.5), (a,), **GRADCHECK)
    assert gradcheck(relu, (kinked,), **GRADCHECK)
    assert gradcheck(leaky_relu, (kinked,), **GRADCHECK)
    assert gradcheck(exp, (a,), **GRADCHECK)
    assert gradcheck(log, (positive,), **GRADCHECK)
    assert gradcheck(concat_cols, (a, c), **GRADCHECK)
    assert gradcheck(lambda x: gather_rows(x, [rows - 1, 0, 0]), (a,), **GRADCHECK)
    assert gradcheck(row_softmax, (a,), **GRADCHECK)
    assert gradcheck(row_log_softmax, (a,), **GRADCHECK)
    assert gradcheck(mse, (a, c), **GRADCHECK)


@pytest.mark.parametrize("seed", range(10))
def test_gradients_of_segment_ops(seed):
    rng = np.random.default_rng(seed)
    count = int(rng.integers(3, 12))
    num_segments = int(rng.integers(1, 4))
    segments = torch.as_tensor(rng.integers(num_segments, size=count), dtype=torch.long)
    scores = _random((count,), seed=seed)
    values = _random((count, 3), seed=seed + 1)
    assert gradcheck(lambda s: segment_softmax(s, segments, num_segments), (scores,), **GRADCHECK)
    assert gradcheck(lambda v: segment_sum(v, segments, num_segments), (values,), **GRADCHECK)


@pytest.mark.parametrize("seed", range(10))
def test_gradients_of_losses(seed):
    rng = np.random.default_rng(seed)
    rows, classes = int(rng.integers(2, 6)), int(rng.integers(2, 5))
    logits = _random((rows, classes), seed=seed)
    labels = torch.as_tensor(rng.integers(classes, size=rows), dtype=torch.long)
    target = row_softmax(_random((rows, classes), seed=seed + 1, requires_grad=False))
    subset = sorted(set(rng.integers(rows, size=rows).tolist()))

    assert gradcheck(lambda z: cross_entropy(z, labels, subset), (logits,), **GRADCHECK)
    assert gradcheck(lambda z: kl_divergence(target, row_softmax(z), subset), (logits,), **GRADCHECK)


def test_segment_softmax_sums_to_one_per_segment():
    scores = as_tensor([1.0, 2.0, 3.0, -1.0, 0.5])
    segments = torch.tensor([0, 0, 1, 1, 1])
    weights = segment_softmax(scores, segments, 2)
    totals = segment_sum(weights.unsqueeze(1), segments, 2).squeeze(1)
    assert torch.allclose(totals, torch.ones(2, dtype=torch.float64), atol=1e-12)


def test_row_softmax_rows_sum_to_one():
    probabilities = row_softmax(_random((5, 4), seed=0, requires_grad=False) * 50)
    assert torch.allclose(probabilities.sum(dim=1), torch.ones(5, dtype=torch.float64), atol=1e-12)


def test_kl_of_identical_distributions_is_zero():
    p = row_softmax(_random((4, 3), seed=2, requires_grad=False))
    assert kl_divergence(p, p, range(4)).item() == pytest.approx(0.0, abs=1e-15)


def test_kl_ignores_zero_support_in_p():
    """Test that rows of p with zero entries contribute no log(0) terms."""
    p = as_tensor([[1.0, 0.0], [0.5, 0.5]])
    q = as_tensor([[0.5, 0.5], [0.5, 0.5]])
    values = kl_divergence(p, q, [0, 1], reduction="none")
    assert values[0].item() == pytest.approx(np.log(2.0))
    assert values[1].item() == pytest.approx(0.0, abs=1e-15)


def test_kl_rejects_invalid_distribution():
    with pytest.raises(DomainError):
        kl_divergence(as_tensor([[0.7, 0.7]]), as_tensor([[0.5, 0.5]]), [0])


def test_losses_reject_empty_subset():
    logits = _random((3, 2), seed=0)
    with pytest.raises(EmptySetError):
        cross_entropy(logits, [0, 1, 0], [])


def test_backward_requires_scalar_root():
    x = _random((2, 2), seed=0)
    with pytest.raises(ContractError):
        backward(x * 2)
    with pytest.raises(ContractError):
        backward(as_tensor(1.0))


def test_backward_accumulates_gradients():
    x = _random((2, 2), seed=0)
    backward((x * x).sum())
    backward((x * x).sum())
    assert torch.allclose(x.grad, 4 * x.detach())


def test_optimizer_step_rejects_non_finite_gradient():
    param = torch.nn.Parameter(torch.zeros(2, 3, dtype=torch.float64))
    optimizer = build_optimizer([param], lr=0.1)
    param.grad = torch.full((2, 3), float("nan"), dtype=torch.float64)
    with pytest.raises(DomainError):
        optimizer_step(optimizer)
    assert torch.count_nonzero(param.detach()) == 0


def test_optimizer_step_descends():
    param = torch.nn.Parameter(torch.ones(3, dtype=torch.float64))
    optimizer = build_optimizer([param], lr=0.1)
    for _ in range(20):
        optimizer.zero_grad()
        backward((param ** 2).sum())
        optimizer_step(optimizer)
    assert float((param ** 2).sum()) < 3.0


def test_first_adam_step_moves_by_the_learning_rate():
    param = torch.nn.Parameter(torch.tensor([0.5], dtype=torch.float64))
    optimizer = build_optimizer([param], lr=0.01)
    param.grad = torch.ones(1, dtype=torch.float64)
    optimizer_step(optimizer)
    assert param.item() == pytest.approx(0.49, abs=1e-9)


def test_zero_gradient_leaves_parameters_unchanged():
    param = torch.nn.Parameter(torch.arange(6, dtype=torch.float64).reshape(2, 3))
    before = param.detach().clone()
    optimizer = build_optimizer([param], lr=0.01)
    param.grad = torch.zeros(2, 3, dtype=torch.float64)
    optimizer_step(optimizer)
    assert torch.equal(param.detach(), before)
