import numpy as np
import pytest

from structgan.autograd import NonFiniteError, Tensor
from structgan.games import loss_ry
from structgan.networks import NetworkSpec, build_network, classify, one_hot
from structgan.optim import AdamState
from structgan.trainer import (
    SOURCE_LABELED,
    BatchSources,
    MixingError,
    MixingPortions,
    Optimizers,
    PriorSpec,
    TrainingDivergedError,
    classifier_step,
    critic_xy_step,
    critic_xz_step,
    descend,
    generator_step,
    inference_step,
    mix_batch,
    mixing_schedule,
    pretrain_classifier,
    sample_generated,
    sample_pseudo_labeled,
    train,
    train_step,
)


def _sources(split, rows=16):
    return BatchSources(
        x_u=split.x_unlabeled[:rows],
        x_labeled=split.x_labeled,
        y_labeled=one_hot(split.y_labeled, split.num_classes),
    )


def test_schedule_endpoints_and_midpoint(tiny_train_config):
    config = tiny_train_config.model_copy(update={"epochs": 20, "ramp_start": 4, "ramp_end": 12})
    assert mixing_schedule(0, config) == MixingPortions(1.0, 0.0, 0.0)
    end = mixing_schedule(15, config)
    assert (end.p_label, end.p_gen, end.p_pseudo) == pytest.approx((0.25, 0.5, 0.25))
    mid = mixing_schedule(8, config)
    assert (mid.p_label, mid.p_gen, mid.p_pseudo) == pytest.approx((0.625, 0.25, 0.125))


def test_default_ramp_ends_at_sixty_percent(tiny_train_config):
    config = tiny_train_config.model_copy(update={"epochs": 200, "ramp_start": 3, "ramp_end": None})
    assert config.resolved_ramp_end == 120
    assert mixing_schedule(119, config).p_gen < 0.5
    assert mixing_schedule(120, config).p_gen == pytest.approx(0.5)


def _pools(rng):
    labeled = (rng.normal(size=(3, 2)), one_hot([0, 1, 2], 4))
    generated = (rng.normal(size=(16, 2)), one_hot(rng.integers(0, 4, size=16), 4))
    pseudo = (rng.normal(size=(16, 2)), one_hot(rng.integers(0, 4, size=16), 4))
    return labeled, generated, pseudo


def test_mix_batch_counts():
    labeled, generated, pseudo = _pools(np.random.default_rng(0))
    batch = mix_batch(labeled, generated, pseudo, MixingPortions(0.25, 0.5, 0.25), 16, np.random.default_rng(1))
    assert batch.counts() == (4, 8, 4)
    assert batch.x.shape == (16, 2) and batch.y.shape == (16, 4)


def test_mix_batch_labeled_only_draws_with_replacement():
    labeled, generated, pseudo = _pools(np.random.default_rng(0))
    batch = mix_batch(labeled, generated, pseudo, MixingPortions(1.0, 0.0, 0.0), 16, np.random.default_rng(1))
    assert batch.counts() == (16, 0, 0)
    assert all(any(np.array_equal(row, pool_row) for pool_row in labeled[0]) for row in batch.x)


def test_mix_batch_is_deterministic():
    labeled, generated, pseudo = _pools(np.random.default_rng(0))
    portions = MixingPortions(0.25, 0.5, 0.25)
    first = mix_batch(labeled, generated, pseudo, portions, 16, np.random.default_rng(9))
    second = mix_batch(labeled, generated, pseudo, portions, 16, np.random.default_rng(9))
    assert np.array_equal(first.x, second.x) and np.array_equal(first.source, second.source)


def test_mix_batch_needs_labeled_rows():
    _, generated, pseudo = _pools(np.random.default_rng(0))
    empty = (np.zeros((0, 2)), np.zeros((0, 4)))
    with pytest.raises(MixingError):
        mix_batch(empty, generated, pseudo, MixingPortions(0.5, 0.5, 0.0), 16, np.random.default_rng(0))


def test_portions_must_form_a_simplex_point():
    with pytest.raises(MixingError):
        MixingPortions(0.5, 0.5, 0.5)


def test_sample_generated_shapes_and_balance():
    G = build_network(NetworkSpec(role="G", x_dim=2, y_dim=4, z_dim=3, hidden=(4,)), 0)
    priors = PriorSpec(num_classes=4, z_dim=3)
    gen = sample_generated(G, priors, 16, np.random.default_rng(0))
    assert gen.x.shape == (16, 2) and gen.y.shape == (16, 4) and gen.z.shape == (16, 3)
    assert np.all(gen.y.sum(axis=1) == 1.0)

    many = sample_generated(G, priors, 10_000, np.random.default_rng(1))
    sigma = np.sqrt(10_000 * 0.25 * 0.75)
    assert np.all(np.abs(many.y.sum(axis=0) - 2500) < 3 * sigma)


def test_uniform_z_prior_is_bounded():
    z = PriorSpec(num_classes=2, z_dim=5, z_prior="uniform").sample_z(np.random.default_rng(0), 1000)
    assert np.all((z >= -1) & (z < 1))


def _classifier_with_bias(bias):
    C = build_network(NetworkSpec(role="C", x_dim=2, y_dim=4, z_dim=1, hidden=(4,)), 0).zeroed()
    tensors = dict(C.tensors)
    from structgan.autograd import Tensor

    tensors["dense1.bias"] = Tensor(np.asarray([bias], dtype=float))
    return C.with_tensors(tensors)


def test_pseudo_labels_from_a_point_mass():
    C = _classifier_with_bias([0.0, 0.0, 50.0, 0.0])
    x_u = np.random.default_rng(0).normal(size=(64, 2))
    x_c, y_c = sample_pseudo_labeled(C, x_u, np.random.default_rng(1))
    assert x_c is x_u
    assert np.all(np.argmax(y_c, axis=1) == 2)


def test_pseudo_labels_from_a_uniform_classifier():
    C = _classifier_with_bias([0.0, 0.0, 0.0, 0.0])
    _, y_c = sample_pseudo_labeled(C, np.zeros((10_000, 2)), np.random.default_rng(2))
    sigma = np.sqrt(10_000 * 0.25 * 0.75)
    assert np.all(np.abs(y_c.sum(axis=0) - 2500) < 3 * sigma)


def test_pretraining_separates_a_toy_set():
    rng = np.random.default_rng(0)
    labels = np.array([0, 1] * 6)
    x = np.stack([np.where(labels == 0, -1.0, 1.0), np.zeros(12)], axis=1) + rng.normal(0, 0.1, size=(12, 2))
    C = build_network(NetworkSpec(role="C", x_dim=2, y_dim=2, z_dim=1, hidden=(8,)), 0)
    before = loss_ry(C, (x, one_hot(labels, 2)), None).item()
    trained = pretrain_classifier(C, x, labels, epochs=300, lr=1e-2)
    after = loss_ry(trained, (x, one_hot(labels, 2)), None).item()
    assert np.all(np.argmax(classify(trained, x).data, axis=1) == labels)
    assert after <= before
    again = pretrain_classifier(C, x, labels, epochs=300, lr=1e-2)
    assert again.fingerprint() == trained.fingerprint()


def test_pretraining_edge_cases():
    C = build_network(NetworkSpec(role="C", x_dim=2, y_dim=2, z_dim=1), 0)
    assert pretrain_classifier(C, np.ones((2, 2)), np.array([0, 1]), epochs=0) is C
    with pytest.raises(ValueError):
        pretrain_classifier(C, np.zeros((0, 2)), np.zeros(0, dtype=int), epochs=3)


def test_two_critic_steps_per_batch(tiny_split, tiny_nets, tiny_train_config):
    config = tiny_train_config.model_copy(update={"k_critic": 2})
    optimizers = Optimizers.create(tiny_nets, config)
    train_step(tiny_nets, optimizers, _sources(tiny_split), config, epoch=0, rng=np.random.default_rng(0))
    assert optimizers.update_counts() == {"G": 1, "I": 1, "C": 1, "Dxy": 2, "Dxz": 2}


def test_each_step_updates_only_its_network(tiny_split, tiny_nets, tiny_train_config):
    from structgan.trainer import GeneratedBatch, MixedBatch

    rng = np.random.default_rng(0)
    sources = _sources(tiny_split)
    priors = PriorSpec.from_config(tiny_train_config)
    gen = sample_generated(tiny_nets.G, priors, 16, rng)
    assert isinstance(gen, GeneratedBatch)
    mixed = MixedBatch(x=sources.x_labeled, y=sources.y_labeled, source=np.full(8, SOURCE_LABELED))
    states = Optimizers.create(tiny_nets, tiny_train_config).states

    steps = {
        "Dxz": lambda: critic_xz_step(tiny_nets, states["Dxz"], sources.x_u, gen),
        "Dxy": lambda: critic_xy_step(tiny_nets, states["Dxy"], mixed, gen),
        "I": lambda: inference_step(tiny_nets, states["I"], sources.x_u, gen, tiny_train_config),
        "C": lambda: classifier_step(tiny_nets, states["C"], mixed, gen, tiny_train_config, epoch=0),
        "G": lambda: generator_step(tiny_nets, states["G"], sources.x_u, gen, tiny_train_config),
    }
    for role, step in steps.items():
        before = tiny_nets.fingerprints()
        updated, _ = step()
        assert tiny_nets.fingerprints() == before
        assert updated.fingerprint() != before[role]
        for other, params in tiny_nets.items():
            if other != role:
                assert all(t.grad is None for t in params.tensors.values()), (role, other)


def test_classifier_ignores_generated_term_before_joining(tiny_split, tiny_nets, tiny_train_config):
    config = tiny_train_config.model_copy(update={"c_join_epoch": 5})
    rng = np.random.default_rng(0)
    sources = _sources(tiny_split)
    gen = sample_generated(tiny_nets.G, PriorSpec.from_config(config), 16, rng)
    mixed = mix_batch(
        (sources.x_labeled, sources.y_labeled),
        (gen.x, gen.y),
        (sources.x_u, sources.y_labeled[:1].repeat(16, axis=0)),
        MixingPortions(1.0, 0.0, 0.0),
        16,
        rng,
    )
    state_a = AdamState.for_params(tiny_nets.C.tensors, config.lr_c)
    state_b = AdamState.for_params(tiny_nets.C.tensors, config.lr_c)
    stepped, _ = classifier_step(tiny_nets, state_a, mixed, gen, config, epoch=2)
    expected, _ = descend(tiny_nets.C, state_b, "R_y", lambda c: loss_ry(c, (mixed.x, mixed.y), None))
    assert stepped.fingerprint() == expected.fingerprint()


def test_one_epoch_is_finite_and_deterministic(tiny_split, tiny_train_config):
    from structgan.networks import ROLES
    from structgan.trainer import build_networks, build_specs

    def run():
        specs = build_specs(tiny_split.x_dim, tiny_train_config, {role: (8, 8) for role in ROLES})
        nets = build_networks(specs, seed=2)
        return train(nets, tiny_split, tiny_train_config, seed=3)

    first, second = run(), run()
    assert len(first.history) == 1
    assert first.history == second.history
    assert first.nets.fingerprints() == second.nets.fingerprints()


def test_zero_epochs_only_pretrains(tiny_split, tiny_nets, tiny_train_config):
    before = tiny_nets.fingerprints()
    config = tiny_train_config.model_copy(update={"epochs": 0})
    result = train(tiny_nets, tiny_split, config, seed=0)
    after = result.nets.fingerprints()
    assert result.history == []
    assert after["C"] != before["C"]
    assert {k: v for k, v in after.items() if k != "C"} == {k: v for k, v in before.items() if k != "C"}


def test_history_and_callback_records(tiny_split, tiny_nets, tiny_train_config):
    config = tiny_train_config.model_copy(update={"epochs": 3})
    seen = []
    result = train(tiny_nets, tiny_split, config, seed=0, on_epoch=lambda e, n, r: seen.append(e) or e)
    assert len(result.history) == 3
    assert seen == [0, 1, 2]
    assert result.metrics == [0, 1, 2]
    assert [r.step for r in result.history] == [0, 1, 2]


def test_ablated_games_still_train(tiny_split, tiny_nets, tiny_train_config):
    config = tiny_train_config.model_copy(update={"use_ry": False, "use_rz": False})
    result = train(tiny_nets, tiny_split, config, seed=0)
    assert len(result.history) == 1


def _blown_up(params):
    return params.with_tensors({name: Tensor(t.data * 1e200) for name, t in params.tensors.items()})


def test_non_finite_sampling_is_a_divergence(tiny_split, tiny_nets, tiny_train_config):
    tiny_nets.G = _blown_up(tiny_nets.G)
    optimizers = Optimizers.create(tiny_nets, tiny_train_config)
    with pytest.raises(TrainingDivergedError) as info:
        train_step(tiny_nets, optimizers, _sources(tiny_split), tiny_train_config, epoch=0, rng=np.random.default_rng(0))
    assert info.value.game == "G sampling"
    assert isinstance(info.value.__cause__, NonFiniteError)


def test_non_finite_inference_is_a_divergence(tiny_split, tiny_nets, tiny_train_config):
    tiny_nets.I = _blown_up(tiny_nets.I)
    optimizers = Optimizers.create(tiny_nets, tiny_train_config)
    with pytest.raises(TrainingDivergedError, match="L_xz critic"):
        train_step(tiny_nets, optimizers, _sources(tiny_split), tiny_train_config, epoch=0, rng=np.random.default_rng(0))


def test_pseudo_rows_enter_the_classifier_term_when_enabled(tiny_split, tiny_nets, tiny_train_config):
    from structgan.trainer import SOURCE_PSEUDO, MixedBatch

    sources = _sources(tiny_split)
    gen = sample_generated(tiny_nets.G, PriorSpec.from_config(tiny_train_config), 16, np.random.default_rng(0))
    pseudo_y = one_hot(np.arange(8) % 4, 4)
    mixed = MixedBatch(
        x=np.concatenate([sources.x_labeled, sources.x_u[:8]]),
        y=np.concatenate([sources.y_labeled, pseudo_y]),
        source=np.array([SOURCE_LABELED] * 8 + [SOURCE_PSEUDO] * 8),
    )

    def stepped(pseudo_in_ry):
        config = tiny_train_config.model_copy(update={"c_join_epoch": 5, "pseudo_in_ry": pseudo_in_ry})
        state = AdamState.for_params(tiny_nets.C.tensors, config.lr_c)
        return classifier_step(tiny_nets, state, mixed, gen, config, epoch=0)[0].fingerprint()

    def expected(rows):
        state = AdamState.for_params(tiny_nets.C.tensors, tiny_train_config.lr_c)
        return descend(tiny_nets.C, state, "R_y", lambda c: loss_ry(c, (mixed.x[rows], mixed.y[rows]), None))[0].fingerprint()

    assert stepped(False) == expected(slice(0, 8))
    assert stepped(True) == expected(slice(0, 16))
