import numpy as np
import pytest

from structgan import ops
from structgan.autograd import ShapeError, Tape, Tensor, backward
from structgan.networks import (
    NetworkError,
    NetworkSpec,
    build_network,
    classifier_logits,
    classify,
    critic_xy,
    critic_xz,
    generator_forward,
    infer_z,
    one_hot,
)


def _g_spec(**kwargs):
    values = dict(role="G", x_dim=5, y_dim=10, z_dim=64, hidden=(32, 32))
    values.update(kwargs)
    return NetworkSpec(**values)


def test_build_is_deterministic_in_seed():
    spec = _g_spec()
    assert build_network(spec, 3).fingerprint() == build_network(spec, 3).fingerprint()
    assert build_network(spec, 3).fingerprint() != build_network(spec, 4).fingerprint()


def test_generator_layer_widths_and_parameter_count():
    spec = _g_spec()
    params = build_network(spec, 0)
    assert spec.layer_shapes()[0] == (74, 32)
    assert params.parameter_count() == 74 * 32 + 32 + 32 * 32 + 32 + 32 * 5 + 5
    assert all(np.all(params.tensors[f"dense{i}.bias"].data == 0) for i in range(3))


def test_glorot_uniform_bounds():
    params = build_network(_g_spec(), 1)
    limit = np.sqrt(6.0 / (74 + 32))
    assert np.abs(params.tensors["dense0.weight"].data).max() <= limit


def test_zero_width_layer_is_rejected():
    with pytest.raises(NetworkError):
        _g_spec(hidden=(32, 0))


def test_role_heads_are_enforced():
    with pytest.raises(NetworkError):
        NetworkSpec(role="I", x_dim=2, y_dim=4, z_dim=2, head="sigmoid")
    with pytest.raises(NetworkError):
        NetworkSpec(role="Dxz", x_dim=2, y_dim=4, z_dim=2, head="linear")
    assert NetworkSpec(role="C", x_dim=2, y_dim=4, z_dim=2).head == "softmax"


def test_generator_forward_shapes_and_determinism():
    G = build_network(_g_spec(), 0)
    rng = np.random.default_rng(0)
    y = one_hot(rng.integers(0, 10, size=16), 10)
    z = rng.normal(size=(16, 64))
    out = generator_forward(G, y, z).data
    assert out.shape == (16, 5)
    assert np.array_equal(out, generator_forward(G, y, z).data)

    order = rng.permutation(16)
    assert np.allclose(generator_forward(G, y[order], z[order]).data, out[order], atol=1e-12)


def test_generator_rejects_non_one_hot_conditions():
    G = build_network(_g_spec(), 0)
    y = np.full((2, 10), 0.1)
    with pytest.raises(NetworkError):
        generator_forward(G, y, np.zeros((2, 64)))


def test_generator_sigmoid_head_stays_in_unit_interval():
    G = build_network(_g_spec(head="sigmoid"), 0)
    out = generator_forward(G, one_hot(np.arange(10), 10), np.random.default_rng(1).normal(size=(10, 64))).data
    assert np.all((out > 0) & (out < 1))


def test_infer_z_shape_and_mismatch():
    inference = build_network(NetworkSpec(role="I", x_dim=5, y_dim=10, z_dim=3), 0)
    x = np.random.default_rng(0).normal(size=(8, 5))
    assert infer_z(inference, x).data.shape == (8, 3)
    assert np.array_equal(infer_z(inference, x).data, infer_z(inference, x).data)
    with pytest.raises(ShapeError):
        infer_z(inference, np.zeros((8, 4)))


def test_squared_norm_of_inference_has_gradients():
    inference = build_network(NetworkSpec(role="I", x_dim=3, y_dim=2, z_dim=2, hidden=(4,)), 0)
    with Tape():
        z_hat = infer_z(inference, np.ones((2, 3)))
        backward(ops.reduce_sum(ops.mul(z_hat, z_hat)))
    assert all(t.grad is not None for t in inference.tensors.values())


def test_classifier_rows_are_distributions():
    C = build_network(NetworkSpec(role="C", x_dim=4, y_dim=3, z_dim=1), 0)
    x = np.random.default_rng(0).normal(size=(50, 4)) * 10
    probs = classify(C, x).data
    assert np.all(probs >= 0)
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-9)


def test_zero_final_layer_classifier_is_uniform():
    C = build_network(NetworkSpec(role="C", x_dim=4, y_dim=5, z_dim=1, hidden=(6,)), 0)
    tensors = dict(C.tensors)
    tensors["dense1.weight"] = Tensor(np.zeros((6, 5)))
    C = C.with_tensors(tensors)
    assert np.allclose(classify(C, np.ones((3, 4))).data, 0.2)


def test_argmax_is_shift_invariant():
    C = build_network(NetworkSpec(role="C", x_dim=4, y_dim=3, z_dim=1), 2)
    x = np.random.default_rng(2).normal(size=(20, 4))
    logits = classifier_logits(C, x)
    shifted = ops.softmax(ops.add(logits, Tensor([[7.0]]))).data
    assert np.array_equal(np.argmax(shifted, axis=1), np.argmax(classify(C, x).data, axis=1))


def test_zero_weight_critics_output_half():
    Dxy = build_network(NetworkSpec(role="Dxy", x_dim=2, y_dim=3, z_dim=2, activation="leaky_relu"), 0).zeroed()
    Dxz = build_network(NetworkSpec(role="Dxz", x_dim=2, y_dim=3, z_dim=2, activation="leaky_relu"), 0).zeroed()
    x = np.random.default_rng(0).normal(size=(4, 2))
    assert np.all(critic_xy(Dxy, x, one_hot(np.arange(4) % 3, 3)).data == 0.5)
    assert np.all(critic_xz(Dxz, x, np.ones((4, 2))).data == 0.5)


def test_critic_scores_are_strictly_inside_unit_interval():
    Dxz = build_network(NetworkSpec(role="Dxz", x_dim=2, y_dim=3, z_dim=2), 5)
    scores = critic_xz(Dxz, np.random.default_rng(1).normal(size=(100, 2)), np.zeros((100, 2))).data
    assert scores.shape == (100, 1)
    assert np.all((scores > 0) & (scores < 1))


def test_critic_batch_mismatch():
    Dxz = build_network(NetworkSpec(role="Dxz", x_dim=2, y_dim=3, z_dim=2), 5)
    with pytest.raises(ShapeError):
        critic_xz(Dxz, np.zeros((3, 2)), np.zeros((4, 2)))


def test_frozen_params_record_no_gradient():
    C = build_network(NetworkSpec(role="C", x_dim=2, y_dim=3, z_dim=1), 0)
    with Tape():
        out = classify(C.frozen(), np.ones((2, 2)))
    assert not out.requires_grad


def test_with_tensors_rejects_non_finite_values():
    C = build_network(NetworkSpec(role="C", x_dim=2, y_dim=3, z_dim=1), 0)
    tensors = dict(C.tensors)
    tensors["dense0.bias"] = Tensor(np.array([[np.inf] * 64]))
    with pytest.raises(NetworkError):
        C.with_tensors(tensors)
