import numpy as np
import pytest

from zonalseg.tensor import NumericError, ShapeError, Tensor, graph_ops, is_grad_enabled, no_grad


def test_broadcast_add_mul_gradients():
    a = Tensor(np.arange(6, dtype=np.float64).reshape(2, 3), requires_grad=True)
    b = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    ((a * b + b) / 2.0).sum().backward()
    np.testing.assert_allclose(a.grad, np.broadcast_to(b.data / 2, (2, 3)))
    np.testing.assert_allclose(b.grad, a.data.sum(axis=0) / 2 + 1.0)


def test_reused_node_accumulates():
    x = Tensor(np.array([3.0]), requires_grad=True)
    y = x * x
    (y + y).sum().backward()
    np.testing.assert_allclose(x.grad, [12.0])


def test_leaf_grads_accumulate_across_backward_calls():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    (x * 2.0).sum().backward()
    (x * 3.0).sum().backward()
    np.testing.assert_allclose(x.grad, [5.0, 5.0])


def test_mean_and_reshape():
    x = Tensor(np.ones((2, 4)), requires_grad=True)
    x.reshape(8).mean().backward()
    np.testing.assert_allclose(x.grad, np.full((2, 4), 1 / 8))


def test_sub_and_rsub_and_division():
    x = Tensor(np.array([2.0]), requires_grad=True)
    (1.0 - x / 4.0 - x).sum().backward()
    np.testing.assert_allclose(x.grad, [-1.25])
    y = Tensor(np.array([2.0]), requires_grad=True)
    (1.0 / y).sum().backward()
    np.testing.assert_allclose(y.grad, [-0.25])


def test_non_scalar_backward_needs_seed():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError):
        (x * 2.0).backward()
    (x * 2.0).backward(np.ones(3))
    np.testing.assert_allclose(x.grad, [2.0, 2.0, 2.0])


def test_nonfinite_gradient_is_reported():
    x = Tensor(np.array([0.0]), requires_grad=True)
    with np.errstate(divide="ignore"), pytest.raises(NumericError):
        (1.0 / x).sum().backward()


def test_no_grad_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    with no_grad():
        assert not is_grad_enabled()
        y = x * 2.0
    assert is_grad_enabled()
    assert y.is_leaf and not y.requires_grad


def test_detach_cuts_graph():
    x = Tensor(np.array([1.0]), requires_grad=True)
    y = (x * 2.0).detach() * x
    y.sum().backward()
    np.testing.assert_allclose(x.grad, [2.0])


def test_dtype_preserved():
    assert Tensor(np.ones(2, dtype=np.float64)).dtype == np.float64
    assert Tensor([1, 2]).dtype == np.float32
    x = Tensor(np.ones(2, dtype=np.float32), requires_grad=True)
    assert (x * 2.0 + 1.0).dtype == np.float32


def test_graph_ops_lists_recorded_nodes():
    x = Tensor(np.ones(2), requires_grad=True)
    ops = graph_ops(((x * 2.0) + 1.0).sum())
    assert ops == ["mul", "add", "sum"]
