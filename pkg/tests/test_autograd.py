import math

import numpy as np
import pytest

from structgan import ops
from structgan.autograd import NonFiniteError, ShapeError, Tape, Tensor, TensorError, backward


def test_sigmoid_of_zero_is_half():
    assert ops.sigmoid(Tensor([0.0])).item() == 0.5


def test_softmax_of_equal_logits_is_uniform():
    out = ops.softmax(Tensor(np.zeros((1, 10)))).data
    assert np.allclose(out, 0.1)


def test_cross_entropy_of_uniform_prediction():
    probs = Tensor(np.full((3, 10), 0.1))
    onehot = Tensor(np.eye(10)[[1, 4, 7]])
    assert ops.cross_entropy(probs, onehot).item() == pytest.approx(math.log(10), abs=1e-12)


def test_backward_of_sum_of_squares():
    w = Tensor([1.0, 2.0], requires_grad=True)
    with Tape():
        backward(ops.reduce_sum(ops.mul(w, w)))
    assert np.array_equal(w.grad, [2.0, 4.0])


def test_softmax_cross_entropy_gradient_is_probs_minus_target():
    logits = Tensor([[0.3, -1.2, 2.0, 0.1]], requires_grad=True)
    target = np.array([[0.0, 0.0, 1.0, 0.0]])
    with Tape():
        backward(ops.cross_entropy_with_logits(logits, target))
    expected = ops.softmax(logits.detach()).data - target
    assert np.allclose(logits.grad, expected, atol=1e-12)

    logits.zero_grad()
    with Tape():
        backward(ops.cross_entropy(ops.softmax(logits), target))
    assert np.allclose(logits.grad, expected, atol=1e-12)


def test_backward_is_linear_in_the_loss():
    rng = np.random.default_rng(0)
    a_value, b_value = rng.normal(size=(3, 2)), rng.normal(size=(2, 2))

    def losses(a, b):
        out = ops.tanh(ops.matmul(a, b))
        return ops.reduce_mean(out), ops.reduce_sum(ops.mul(out, out))

    a, b = Tensor(a_value, requires_grad=True), Tensor(b_value, requires_grad=True)
    with Tape():
        first, second = losses(a, b)
        backward(ops.add(first, second))
    together = a.grad.copy()

    separate = np.zeros_like(a_value)
    for pick in (0, 1):
        a = Tensor(a_value, requires_grad=True)
        with Tape():
            backward(losses(a, Tensor(b_value, requires_grad=True))[pick])
        separate += a.grad
    assert np.allclose(together, separate, atol=1e-12)


def test_backward_clears_the_tape():
    w = Tensor([[1.0, -2.0]], requires_grad=True)
    with Tape() as tape:
        loss = ops.reduce_sum(ops.sigmoid(w))
        assert len(tape) == 2
        backward(loss)
        assert len(tape) == 0


def test_backward_rejects_non_scalar_loss():
    w = Tensor([1.0, 2.0], requires_grad=True)
    with Tape():
        out = ops.mul(w, w)
        with pytest.raises(ShapeError):
            backward(out)


def test_backward_without_tape_is_an_error():
    w = Tensor([1.0], requires_grad=True)
    loss = ops.reduce_sum(ops.mul(w, w))
    assert not loss.requires_grad
    with pytest.raises(TensorError):
        backward(loss)


def test_shape_mismatch_names_the_op():
    with pytest.raises(ShapeError, match="matmul"):
        ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError, match="add"):
        ops.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))


def test_non_finite_output_is_an_error():
    with pytest.raises(NonFiniteError, match="log"):
        ops.log(Tensor([0.0, 1.0]))


def test_tensor_rejects_empty_dims_and_is_read_only():
    with pytest.raises(ShapeError):
        Tensor(np.zeros((0, 3)))
    t = Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        t.data[0] = 5.0


def test_forward_ops_are_pure():
    x = Tensor(np.linspace(-2, 2, 12).reshape(3, 4))
    assert np.array_equal(ops.log_softmax(x).data, ops.log_softmax(x).data)
    assert np.array_equal(ops.leaky_relu(x, 0.2).data, ops.leaky_relu(x, 0.2).data)


def test_log_sigmoid_is_stable_for_large_inputs():
    out = ops.log_sigmoid(Tensor([-800.0, 800.0])).data
    assert out[0] == pytest.approx(-800.0)
    assert out[1] == 0.0
