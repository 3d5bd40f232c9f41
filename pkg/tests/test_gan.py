"""WGAN-GP mechanics: penalty values and gradients, training determinism,
sampling statistics. Slow distribution-quality checks live in the
acceptance suite."""

import numpy as np
import pytest

from nadv import gan, nn
from nadv.errors import DimensionError, DivergenceError

from oracles import central_diff


def test_unit_gradient_critic_has_zero_penalty():
    rng = np.random.default_rng(0)
    w = rng.normal(size=(1, 4))
    w /= np.linalg.norm(w)
    critic = nn.DenseNet([nn.Layer(w, np.zeros(1), "identity")])
    pen = gan.gradient_penalty(critic, rng.normal(size=(8, 4)),
                               rng.normal(size=(8, 4)),
                               np.random.default_rng(1))
    assert abs(pen) < 1e-9


@pytest.mark.parametrize("scale", [0.5, 1.0, 2.0])
def test_linear_critic_penalty_closed_form(scale):
    # C(x) = w.x with ||w|| = scale -> penalty (scale - 1)^2 everywhere
    rng = np.random.default_rng(2)
    w = rng.normal(size=(1, 3))
    w *= scale / np.linalg.norm(w)
    critic = nn.DenseNet([nn.Layer(w, np.zeros(1), "identity")])
    pen = gan.gradient_penalty(critic, rng.normal(size=(16, 3)),
                               rng.normal(size=(16, 3)),
                               np.random.default_rng(3))
    assert pen == pytest.approx((scale - 1.0) ** 2, abs=1e-9)


def test_penalty_nonnegative_random_critics():
    rng = np.random.default_rng(4)
    for seed in range(5):
        critic = nn.init_net([3, 6, 1], hidden_activation="leaky_relu",
                             rng=np.random.default_rng(seed))
        pen = gan.gradient_penalty(critic, rng.normal(size=(8, 3)),
                                   rng.normal(size=(8, 3)),
                                   np.random.default_rng(seed))
        assert pen >= 0.0


def test_penalty_param_gradients_match_finite_differences():
    # the double-backward pass, on a critic with curvature (tanh)
    rng = np.random.default_rng(5)
    critic = nn.init_net([3, 5, 4, 1], hidden_activation="tanh",
                         output_activation="identity", rng=rng)
    x_hat = rng.normal(size=(6, 3))
    _, grads = gan._penalty_and_grads(critic, x_hat)

    for i, layer in enumerate(critic.layers):
        def pen_w(w, layer=layer):
            saved = layer.weight.copy()
            layer.weight[...] = w
            val = float(np.mean(
                (gan.interpolate_grad_norms(critic, x_hat) - 1.0) ** 2))
            layer.weight[...] = saved
            return val

        num = central_diff(pen_w, layer.weight.copy())
        assert np.allclose(grads[i][0], num, atol=1e-6), f"layer {i} weight"

        def pen_b(b, layer=layer):
            saved = layer.bias.copy()
            layer.bias[...] = b
            val = float(np.mean(
                (gan.interpolate_grad_norms(critic, x_hat) - 1.0) ** 2))
            layer.bias[...] = saved
            return val

        num_b = central_diff(pen_b, layer.bias.copy())
        assert np.allclose(grads[i][1], num_b, atol=1e-6), f"layer {i} bias"


def test_interpolate_grad_norm_matches_finite_differences():
    rng = np.random.default_rng(6)
    critic = nn.init_net([2, 7, 1], hidden_activation="tanh", rng=rng)
    x = rng.normal(size=(4, 2))
    norms = gan.interpolate_grad_norms(critic, x)
    for j in range(4):
        def out(v):
            return float(nn.forward(critic, v.reshape(1, 2)).output[0, 0])
        g = central_diff(out, x[j].copy())
        assert norms[j] == pytest.approx(np.linalg.norm(g), abs=1e-6)


def test_training_deterministic_and_history_shape():
    rng = np.random.default_rng(7)
    dd = rng.normal(size=(64, 2)).clip(-1, 1)
    spec = gan.GanSpec(2, 2, gen_hidden=(8,), critic_hidden=(8,))
    cfg = gan.GanTrainConfig(steps=3, batch_size=16, seed=42)
    m1, h1 = gan.train_wgan(dd, spec, cfg)
    m2, h2 = gan.train_wgan(dd, spec, cfg)
    assert h1 == h2
    assert len(h1) == 3 and len(h1[0]) == 2
    for l1, l2 in zip(m1.generator.layers, m2.generator.layers):
        assert np.array_equal(l1.weight, l2.weight)
    for l1, l2 in zip(m1.critic.layers, m2.critic.layers):
        assert np.array_equal(l1.weight, l2.weight)


def test_lr_decay_changes_trajectory_but_stays_deterministic():
    rng = np.random.default_rng(7)
    dd = rng.normal(size=(64, 2)).clip(-1, 1)
    spec = gan.GanSpec(2, 2, gen_hidden=(8,), critic_hidden=(8,))
    flat = gan.GanTrainConfig(steps=4, batch_size=16, seed=42)
    dec = gan.GanTrainConfig(steps=4, batch_size=16, lr_decay=True, seed=42)
    m_flat, _ = gan.train_wgan(dd, spec, flat)
    m_dec1, h1 = gan.train_wgan(dd, spec, dec)
    m_dec2, h2 = gan.train_wgan(dd, spec, dec)
    assert h1 == h2
    for l1, l2 in zip(m_dec1.generator.layers, m_dec2.generator.layers):
        assert np.array_equal(l1.weight, l2.weight)
    # smaller late steps must leave a different endpoint than flat lr
    assert not np.array_equal(m_flat.generator.layers[-1].weight,
                              m_dec1.generator.layers[-1].weight)


def test_train_rejects_small_data():
    spec = gan.GanSpec(2, 2, gen_hidden=(4,), critic_hidden=(4,))
    with pytest.raises(DimensionError):
        gan.train_wgan(np.zeros((8, 2)), spec,
                       gan.GanTrainConfig(steps=1, batch_size=16))


def test_sample_deterministic_and_prior_stats():
    model = gan.build_gan(gan.GanSpec(3, 2, gen_hidden=(4,),
                                      critic_hidden=(4,)),
                          np.random.default_rng(8))
    x1, z1 = gan.sample(model, 1, seed=5)
    x2, z2 = gan.sample(model, 1, seed=5)
    assert np.array_equal(x1, x2) and np.array_equal(z1, z2)
    _, z = gan.sample(model, 10000, seed=6)
    assert np.all(np.abs(z.mean(axis=0)) < 0.05)
    assert np.all((z.var(axis=0) > 0.9) & (z.var(axis=0) < 1.1))


def test_generator_output_within_data_range():
    model = gan.build_gan(gan.GanSpec(2, 5), np.random.default_rng(9))
    x, _ = gan.sample(model, 100, seed=0)
    assert x.min() >= -1.0 and x.max() <= 1.0  # tanh output layer


def test_gan_model_validates_dims():
    gen = nn.init_net([2, 4, 3], rng=np.random.default_rng(0))
    bad_critic = nn.init_net([5, 4, 1], rng=np.random.default_rng(1))
    with pytest.raises(DimensionError):
        gan.GanModel(gen, bad_critic)
    two_out = nn.init_net([3, 4, 2], rng=np.random.default_rng(2))
    with pytest.raises(DimensionError):
        gan.GanModel(gen, two_out)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergent_config_raises_with_step_index():
    # lr large enough that one Adam step pushes weights past overflow
    rng = np.random.default_rng(10)
    dd = rng.normal(size=(32, 2)).clip(-1, 1)
    spec = gan.GanSpec(2, 2, gen_hidden=(8,), critic_hidden=(8,))
    cfg = gan.GanTrainConfig(steps=200, batch_size=8, lr=1e160, seed=0)
    with pytest.raises(DivergenceError, match="step"):
        gan.train_wgan(dd, spec, cfg)
