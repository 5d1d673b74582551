"""Tensor-core tests: primitive semantics and gradient correctness."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import central_difference, max_relative_error
from scmm import autodiff as ad
from scmm.autodiff import Tensor
from scmm.errors import ContractError, DimensionError, DomainError


def test_tensor_invariants():
    t = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    assert t.shape == (2, 3)
    assert t.grad.shape == t.data.shape
    assert Tensor(1.0).grad is None


def test_matmul_identity():
    eye = Tensor(np.eye(2))
    m = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert np.array_equal(ad.matmul(eye, m).data, m.data)


def test_matmul_projector_row_selection():
    p = Tensor(np.array([[1.0, 0.0], [0.0, 0.0]]))
    m = Tensor(np.array([[5.0, 6.0], [7.0, 8.0]]))
    assert np.array_equal(ad.matmul(p, m).data, np.array([[5.0, 6.0], [0.0, 0.0]]))


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 2))))


def test_matmul_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)

    def loss_value():
        with ad.no_grad():
            return ad.tensor_sum(ad.square(ad.matmul(a, b))).item()

    loss = ad.tensor_sum(ad.square(ad.matmul(a, b)))
    ad.backward(loss)
    for t in (a, b):
        fd = central_difference(loss_value, t.data)
        assert max_relative_error(t.grad, fd) < 1e-6


def test_conv1d_identity_kernel():
    x = Tensor(np.ones((1, 1, 5)))
    k = Tensor(np.ones((1, 1, 1)))
    out = ad.conv1d(x, k, stride=1, padding=0)
    assert np.array_equal(out.data, np.ones((1, 1, 5)))


def test_conv1d_hand_evaluated_cross_correlation():
    x = Tensor(np.array([[[1.0, 2.0, 3.0, 4.0]]]))
    k = Tensor(np.array([[[1.0, 1.0]]]))
    out = ad.conv1d(x, k, stride=1, padding=0)
    assert np.array_equal(out.data, np.array([[[3.0, 5.0, 7.0]]]))


def test_conv1d_no_kernel_flip():
    # cross-correlation: kernel [1, 2] weights the RIGHT neighbor by 2
    x = Tensor(np.array([[[1.0, 0.0, 0.0]]]))
    k = Tensor(np.array([[[1.0, 2.0]]]))
    out = ad.conv1d(x, k, stride=1, padding=0)
    assert np.array_equal(out.data, np.array([[[1.0, 0.0]]]))


def test_conv1d_output_length_and_errors():
    x = Tensor(np.zeros((2, 3, 10)))
    k = Tensor(np.zeros((4, 3, 3)))
    assert ad.conv1d(x, k, stride=2, padding=1).data.shape == (2, 4, 5)
    with pytest.raises(DimensionError, match="exceeds padded input length"):
        ad.conv1d(Tensor(np.zeros((1, 1, 2))), Tensor(np.zeros((1, 1, 5))), 1, 0)
    with pytest.raises(DimensionError, match="channel mismatch"):
        ad.conv1d(Tensor(np.zeros((1, 2, 8))), Tensor(np.zeros((1, 3, 3))), 1, 0)


@pytest.mark.parametrize("stride,padding", [(1, 0), (1, 2), (2, 1), (3, 2)])
def test_conv1d_gradients_match_finite_differences(stride, padding):
    rng = np.random.default_rng(5)
    x = Tensor(rng.normal(size=(2, 3, 9)), requires_grad=True)
    k = Tensor(rng.normal(size=(4, 3, 3)), requires_grad=True)
    coeffs = rng.normal(size=ad.conv1d(x, k, stride, padding).data.shape)

    def loss_value():
        with ad.no_grad():
            return ad.tensor_sum(ad.mul(ad.conv1d(x, k, stride, padding), Tensor(coeffs))).item()

    loss = ad.tensor_sum(ad.mul(ad.conv1d(x, k, stride, padding), Tensor(coeffs)))
    ad.backward(loss)
    for t in (x, k):
        fd = central_difference(loss_value, t.data)
        assert max_relative_error(t.grad, fd) < 1e-5


def test_sigmoid_symmetry_and_relu():
    assert ad.sigmoid(Tensor(0.0)).item() == 0.5
    assert ad.relu(Tensor(-5.0)).item() == 0.0
    assert ad.relu(Tensor(5.0)).item() == 5.0


@given(st.sampled_from([-2.0, 0.0, 3.7]))
def test_log_exp_inverse_pair(x):
    assert abs(ad.log(ad.exp(Tensor(x))).item() - x) < 1e-12


def test_elementwise_domain_errors():
    with pytest.raises(DomainError):
        ad.log(Tensor(np.array([1.0, -1.0])))
    with pytest.raises(DomainError):
        ad.log(Tensor(0.0))
    with pytest.raises(DomainError):
        ad.div(Tensor(1.0), Tensor(0.0))


def test_broadcast_gradients():
    a = Tensor(np.ones((3, 4)), requires_grad=True)
    b = Tensor(np.ones((1, 4)), requires_grad=True)
    ad.backward(ad.tensor_sum(ad.mul(a, b)))
    assert a.grad.shape == (3, 4)
    assert b.grad.shape == (1, 4)
    assert np.array_equal(b.grad, np.full((1, 4), 3.0))


def test_softmax_rows_uniform_and_stability():
    probs = ad.softmax_rows(Tensor(np.zeros((1, 3))))
    assert np.allclose(probs.data, 1.0 / 3.0, atol=1e-12)
    big = ad.softmax_rows(Tensor(np.array([[1000.0, 0.0]])))
    assert np.isfinite(big.data).all()
    assert abs(big.data[0, 0] - 1.0) < 1e-12


def test_softmax_rows_matches_direct_evaluation():
    row = np.array([[1.0, 2.0, 3.0]])
    expected = np.exp(row) / np.exp(row).sum()
    got = ad.softmax_rows(Tensor(row)).data
    assert np.abs(got - expected).max() < 1e-12
    assert abs(got.sum() - 1.0) < 1e-9


@given(
    st.lists(st.floats(min_value=-50, max_value=50), min_size=2, max_size=6),
    st.lists(st.floats(min_value=-50, max_value=50), min_size=2, max_size=6),
)
@settings(max_examples=60, deadline=None)
def test_softmax_rows_is_row_stochastic(row_a, row_b):
    width = min(len(row_a), len(row_b))
    logits = np.array([row_a[:width], row_b[:width]])
    probs = ad.softmax_rows(Tensor(logits)).data
    assert np.all(probs >= 0.0) and np.all(probs <= 1.0)
    assert np.abs(probs.sum(axis=1) - 1.0).max() < 1e-9


def test_softmax_and_log_softmax_gradients():
    rng = np.random.default_rng(3)
    logits = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
    coeffs = Tensor(rng.normal(size=(3, 5)))

    for op in (ad.softmax_rows, ad.log_softmax_rows):
        logits.zero_grad()

        def loss_value():
            with ad.no_grad():
                return ad.tensor_sum(ad.mul(op(logits), coeffs)).item()

        ad.backward(ad.tensor_sum(ad.mul(op(logits), coeffs)))
        fd = central_difference(loss_value, logits.data)
        assert max_relative_error(logits.grad, fd) < 1e-6


def test_backward_sum_gives_ones():
    x = Tensor(np.zeros((2, 2)), requires_grad=True)
    ad.backward(ad.tensor_sum(x))
    assert np.array_equal(x.grad, np.ones((2, 2)))


def test_backward_sum_of_squares():
    x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    ad.backward(ad.tensor_sum(ad.square(x)))
    assert np.allclose(x.grad, [2.0, 4.0, 6.0], atol=1e-12)


def test_backward_requires_scalar():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ContractError, match="scalar"):
        ad.backward(ad.square(x))


def test_backward_accumulates_without_reset():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    ad.backward(ad.tensor_sum(ad.square(x)))
    first = x.grad.copy()
    ad.backward(ad.tensor_sum(ad.square(x)))
    assert np.array_equal(x.grad, 2.0 * first)


def test_shared_subexpression_and_repeated_operand():
    x = Tensor(np.array([3.0]), requires_grad=True)
    y = ad.mul(x, x)  # x^2 via repeated operand
    z = ad.add(y, y)  # shared node
    ad.backward(ad.tensor_sum(z))
    assert np.allclose(x.grad, [12.0])  # d(2x^2)/dx = 4x


def test_slice_and_concat_roundtrip_gradients():
    x = Tensor(np.arange(12.0).reshape(4, 3), requires_grad=True)
    top = ad.slice_rows(x, 0, 2)
    bottom = ad.slice_rows(x, 2, 4)
    back = ad.concat_rows([top, bottom])
    ad.backward(ad.tensor_sum(ad.mul(back, back)))
    assert np.allclose(x.grad, 2.0 * x.data)


def test_no_grad_blocks_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with ad.no_grad():
        y = ad.square(x)
    assert not y.requires_grad
    ad.backward(ad.tensor_sum(ad.square(x)))
    assert np.allclose(x.grad, 2.0)


def test_determinism_bit_identical():
    def run():
        rng = np.random.default_rng(42)
        a = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
        out = ad.tensor_sum(ad.sigmoid(ad.matmul(a, b)))
        ad.backward(out)
        return out.item(), a.grad.copy(), b.grad.copy()

    v1, ga1, gb1 = run()
    v2, ga2, gb2 = run()
    assert v1 == v2
    assert np.array_equal(ga1, ga2) and np.array_equal(gb1, gb2)
