import numpy as np
import pytest

from structgan.autograd import ShapeError, Tensor
from structgan.optim import AdamState, adam_step


def test_zero_gradient_leaves_params_unchanged():
    params = {"w": Tensor(np.array([[0.5, -1.5]]), requires_grad=True)}
    state = AdamState.for_params(params, lr=0.1)
    updated = adam_step(params, {"w": np.zeros((1, 2))}, state)
    assert np.array_equal(updated["w"].data, params["w"].data)
    assert state.step == 1


def test_first_step_moves_by_learning_rate():
    params = {"w": Tensor([2.0], requires_grad=True)}
    state = AdamState.for_params(params, lr=0.1)
    updated = adam_step(params, {"w": np.ones(1)}, state)
    assert 2.0 - updated["w"].item() == pytest.approx(0.1, rel=1e-6)


def test_step_counter_and_moment_shapes():
    params = {"a": Tensor(np.ones((2, 3))), "b": Tensor(np.ones((1, 3)))}
    state = AdamState.for_params(params, lr=1e-3)
    for expected in range(1, 4):
        params = adam_step(params, {"a": np.ones((2, 3)), "b": np.ones((1, 3))}, state)
        assert state.step == expected
    assert state.m["a"].shape == (2, 3)
    assert state.v["b"].shape == (1, 3)


def test_shape_mismatch_is_rejected():
    params = {"w": Tensor(np.ones((2, 2)))}
    state = AdamState.for_params(params, lr=0.1)
    with pytest.raises(ShapeError):
        adam_step(params, {"w": np.ones((2, 3))}, state)
    assert state.step == 0


def test_identical_runs_are_bitwise_identical():
    def run():
        rng = np.random.default_rng(7)
        params = {"w": Tensor(rng.normal(size=(3, 3)), requires_grad=True)}
        state = AdamState.for_params(params, lr=0.01)
        for _ in range(20):
            params = adam_step(params, {"w": rng.normal(size=(3, 3))}, state)
        return params["w"].data

    assert np.array_equal(run(), run())


def test_defaults_use_gan_betas():
    state = AdamState(lr=2e-4)
    assert (state.beta1, state.beta2, state.eps) == (0.5, 0.999, 1e-8)
