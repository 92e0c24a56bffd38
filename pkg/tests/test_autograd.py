import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from beexformer import autograd as ag
from beexformer.autograd import Tensor
from beexformer.errors import ContractError, DimensionError, NumericalError

from conftest import finite_difference


def grad_of(f, *arrays_):
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays_]
    ag.backward(f(*leaves))
    return [leaf.grad for leaf in leaves]


def check_fd(f, *arrays_, rtol=1e-6, atol=1e-8):
    analytic = grad_of(f, *arrays_)
    for k, a in enumerate(arrays_):
        probe = [x.copy() for x in arrays_]

        def scalar():
            return f(*[Tensor(x) for x in probe]).item()

        numeric = finite_difference(scalar, probe[k])
        np.testing.assert_allclose(analytic[k], numeric, rtol=rtol, atol=atol)


def test_matmul_gradient_matches_finite_differences(rng):
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 2))
    check_fd(lambda x, y: (x @ y).sum(), a, b)


def test_matmul_analytic_form(rng):
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 2))
    ga, gb = grad_of(lambda x, y: (x @ y).sum(), a, b)
    np.testing.assert_allclose(ga, np.ones((3, 2)) @ b.T)
    np.testing.assert_allclose(gb, a.T @ np.ones((3, 2)))


def test_batched_matmul_with_broadcast(rng):
    a = rng.normal(size=(2, 3, 4))
    b = rng.normal(size=(4, 5))
    check_fd(lambda x, y: ((x @ y) ** 2).mean(), a, b)


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        ag.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(DimensionError):
        ag.matmul(Tensor(np.ones(3)), Tensor(np.ones((3, 3))))


@pytest.mark.parametrize("fn", [
    lambda x: ag.tanh(x).sum(),
    lambda x: ag.sigmoid(x * 3.0).sum(),
    lambda x: ag.exp(x).mean(),
    lambda x: ag.log(x * x + 1.0).sum(),
    lambda x: (1.0 / (x * x + 2.0)).sum(),
    lambda x: (x - 0.5 * x ** 3).sum(),
    lambda x: ag.softmax(x, axis=-1)[:, 0].sum(),
    lambda x: ag.log_softmax(x, axis=0)[1].sum(),
    lambda x: ag.swapaxes(x, 0, 1)[0].sum() * 2.0,
    lambda x: ag.concat([x, x * 2.0], axis=-1).sum(axis=0)[3],
    lambda x: ag.stack([x, ag.tanh(x)], axis=0)[1].mean(),
    lambda x: x.reshape(-1)[np.array([0, 0, 5])].sum(),
    lambda x: -(x.T @ x).sum(),
], ids=["tanh", "sigmoid", "exp", "log", "div", "power", "softmax", "log_softmax",
        "swapaxes", "concat", "stack", "gather-repeat", "gram"])
def test_elementwise_and_structural_ops(fn, rng):
    check_fd(fn, rng.normal(size=(3, 4)))


def test_broadcast_add_reduces_gradient(rng):
    a = rng.normal(size=(4, 3))
    bias = rng.normal(size=(3,))
    _, gb = grad_of(lambda x, y: ((x + y) * (x + y)).sum(), a, bias)
    np.testing.assert_allclose(gb, (2 * (a + bias)).sum(axis=0))


def test_reused_node_accumulates(rng):
    a = rng.normal(size=(2, 2))
    (g,) = grad_of(lambda x: (x * x + x).sum(), a)
    np.testing.assert_allclose(g, 2 * a + 1)


def test_second_backward_doubles_leaf_grads():
    x = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    loss = (x * x).sum()
    ag.backward(loss)
    first = x.grad.copy()
    ag.backward(loss)
    np.testing.assert_allclose(x.grad, 2 * first)


def test_backward_needs_scalar_root():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        ag.backward(x * 2.0)


def test_backward_needs_tape():
    with pytest.raises(ContractError):
        ag.backward(Tensor(1.0))


def test_item_rejects_vectors():
    with pytest.raises(ContractError):
        Tensor(np.ones(2)).item()


def test_non_finite_output_is_reported():
    with pytest.raises(NumericalError):
        ag.log(Tensor(np.array([0.0, 1.0])))


def test_constants_get_no_gradient():
    c = Tensor(np.ones(2))
    x = Tensor(np.ones(2), requires_grad=True)
    ag.backward((c * x).sum())
    assert c.grad is None
    np.testing.assert_array_equal(x.grad, [1.0, 1.0])


def test_deep_chain_does_not_recurse():
    x = Tensor(np.array(0.5), requires_grad=True)
    y = x
    for _ in range(5000):
        y = y * 1.0
    ag.backward(y)
    assert x.grad == pytest.approx(1.0)


finite = st.floats(-30, 30, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 7)), elements=finite))
def test_softmax_rows_are_distributions(z):
    p = ag.softmax_rows(Tensor(z)).data
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(1, 8), elements=finite), st.floats(-50, 50))
def test_softmax_is_shift_invariant(z, c):
    np.testing.assert_allclose(ag.softmax(Tensor(z)).data, ag.softmax(Tensor(z + c)).data, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)), elements=finite))
def test_log_softmax_agrees_with_softmax(z):
    np.testing.assert_allclose(np.exp(ag.log_softmax(Tensor(z)).data), ag.softmax(Tensor(z)).data,
                               atol=1e-12)
