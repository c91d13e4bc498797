"""Network engine: forward math, backprop vs finite differences, SGD training,
dropout and sampling statistics, and the weight container format."""

import numpy as np
import pytest

from deferbench import nnet
from deferbench.errors import ConfigError, DivergenceError, FormatError, InputShapeError
from deferbench.losses import LossSpec

CE = LossSpec("cross_entropy")


def tiny_net(input_dim=4, hidden=(5, 3), output_dim=2, dropout=0.0, seed=0):
    return nnet.init_network(
        nnet.NetConfig(
            input_dim=input_dim,
            hidden_dims=hidden,
            output_dim=output_dim,
            dropout_rate=dropout,
            seed=seed,
        )
    )


def toy_problem(n=64, input_dim=4, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, input_dim))
    y = (x[:, 0] > 0.0).astype(np.int64)
    return x, y


# ---------------------------------------------------------------------------
# initialization and the flat parameter view
# ---------------------------------------------------------------------------


def test_init_shapes_and_determinism():
    net = tiny_net()
    assert [w.shape for w in net.weights] == [(4, 5), (5, 3), (3, 2)]
    assert [b.shape for b in net.biases] == [(5,), (3,), (2,)]
    assert all(not b.any() for b in net.biases)
    again = tiny_net()
    for a, b in zip(net.weights, again.weights):
        np.testing.assert_array_equal(a, b)
    other = tiny_net(seed=1)
    assert any((a != b).any() for a, b in zip(net.weights, other.weights))


def test_init_he_scale():
    net = tiny_net(input_dim=200, hidden=(300,), seed=7)
    observed = net.weights[0].std()
    assert observed == pytest.approx(np.sqrt(2.0 / 200), rel=0.05)


def test_param_roundtrip_is_bitwise():
    net = tiny_net(seed=3)
    flat = nnet.get_params(net)
    assert flat.shape == (net.parameter_count,)
    other = tiny_net(seed=4)
    nnet.set_params(other, flat)
    for a, b in zip(net.weights, other.weights):
        np.testing.assert_array_equal(a, b)
    for a, b in zip(net.biases, other.biases):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(nnet.get_params(other), flat)


def test_with_params_leaves_original_untouched():
    net = tiny_net(seed=5)
    before = nnet.get_params(net).copy()
    shifted = nnet.with_params(net, before + 1.0)
    np.testing.assert_array_equal(nnet.get_params(net), before)
    np.testing.assert_array_equal(nnet.get_params(shifted), before + 1.0)


def test_set_params_rejects_wrong_length():
    net = tiny_net()
    with pytest.raises(InputShapeError):
        nnet.set_params(net, np.zeros(net.parameter_count + 1))


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------


def test_forward_matches_manual_computation():
    net = tiny_net(input_dim=3, hidden=(4,), output_dim=2, seed=11)
    x = np.random.default_rng(12).standard_normal((6, 3))
    hidden = np.maximum(x @ net.weights[0] + net.biases[0], 0.0)
    expected = hidden @ net.weights[1] + net.biases[1]
    np.testing.assert_allclose(nnet.forward(net, x), expected, atol=1e-14)


def test_forward_single_coordinate_sensitivity():
    # moving one input coordinate moves the logits through that column only
    net = tiny_net(input_dim=3, hidden=(4,), seed=13)
    x = np.zeros((1, 3))
    base = nnet.forward(net, x)
    x2 = x.copy()
    x2[0, 1] = 0.5
    moved = nnet.forward(net, x2)
    relu_grad = (x2 @ net.weights[0] + net.biases[0] > 0)[0]
    expected = base + 0.5 * ((net.weights[0][1] * relu_grad) @ net.weights[1])[None, :]
    np.testing.assert_allclose(moved, expected, atol=1e-12)


def test_forward_rejects_wrong_width():
    net = tiny_net(input_dim=4)
    with pytest.raises(InputShapeError):
        nnet.forward(net, np.zeros((2, 5)))


def test_forward_dropout_needs_rng():
    net = tiny_net(dropout=0.5)
    with pytest.raises(ConfigError):
        nnet.forward(net, np.zeros((2, 4)), dropout_on=True)


def test_forward_dropout_off_is_deterministic():
    net = tiny_net(dropout=0.5)
    x = np.random.default_rng(0).standard_normal((8, 4))
    np.testing.assert_array_equal(nnet.forward(net, x), nnet.forward(net, x))


# ---------------------------------------------------------------------------
# dropout and minibatch sampling statistics
# ---------------------------------------------------------------------------


def test_dropout_mask_values_and_mean():
    rng = np.random.default_rng(21)
    rate = 0.2
    mask = nnet.draw_dropout_mask(rng, (400, 300), rate)  # 1.2e5 draws
    values = np.unique(mask)
    np.testing.assert_allclose(values, [0.0, 1.0 / (1.0 - rate)], atol=1e-12)
    # inverted scaling keeps the expected activation unchanged
    assert abs(mask.mean() - 1.0) < 1e-2


def test_minibatch_sampling_frequencies_follow_weights():
    rng = np.random.default_rng(22)
    weights = np.array([1.0, 1.0, 2.0])
    idx = nnet.draw_minibatch_indices(rng, weights, 200_000)
    freq = np.bincount(idx, minlength=3) / idx.shape[0]
    np.testing.assert_allclose(freq, [0.25, 0.25, 0.5], rtol=0.02)


# ---------------------------------------------------------------------------
# backprop against central differences
# ---------------------------------------------------------------------------


def relu_margin(net, x):
    """Smallest |pre-activation|; zero means a kink sits on the FD point."""
    h = x
    worst = np.inf
    for W, b in zip(net.weights[:-1], net.biases[:-1]):
        z = h @ W + b
        worst = min(worst, float(np.abs(z).min()))
        h = np.maximum(z, 0.0)
    return worst


def test_backward_matches_finite_differences():
    net = tiny_net(input_dim=3, hidden=(4, 3), output_dim=2, seed=69)
    x, y = toy_problem(n=16, input_dim=3, seed=73)
    # central differences are only valid away from the ReLU kinks; a sample
    # with a fully dead first layer would park a second-layer kink at exactly 0
    assert relu_margin(net, x) > 1e-3
    analytic = nnet.backward(net, x, y, CE)

    params = nnet.get_params(net)
    probe = net.copy()
    h = 1e-6
    numeric = np.zeros_like(params)
    for i in range(params.shape[0]):
        up = params.copy()
        up[i] += h
        nnet.set_params(probe, up)
        f_up = nnet.mean_loss(probe, x, y, CE)
        down = params.copy()
        down[i] -= h
        nnet.set_params(probe, down)
        f_down = nnet.mean_loss(probe, x, y, CE)
        numeric[i] = (f_up - f_down) / (2.0 * h)

    rel = np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric)
    assert rel < 1e-6


def test_backward_with_dropout_mask_matches_masked_loss():
    # gradient of the masked forward, checked against differences through it
    net = tiny_net(input_dim=3, hidden=(4,), output_dim=2, seed=33)
    x, y = toy_problem(n=8, input_dim=3, seed=34)
    mask = nnet.draw_dropout_mask(np.random.default_rng(35), (8, 4), 0.5)
    analytic = nnet.backward(net, x, y, CE, dropout_mask=mask)

    def masked_loss(flat):
        probe = nnet.with_params(net, flat)
        logits, _ = nnet._forward_cached(probe, x, mask)
        return float(CE.loss(logits, y).mean())

    params = nnet.get_params(net)
    h = 1e-6
    numeric = np.zeros_like(params)
    for i in range(params.shape[0]):
        up = params.copy()
        up[i] += h
        down = params.copy()
        down[i] -= h
        numeric[i] = (masked_loss(up) - masked_loss(down)) / (2.0 * h)
    rel = np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric)
    assert rel < 1e-6


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def test_train_reduces_loss_and_checkpoints_every_epoch():
    net = tiny_net(input_dim=4, hidden=(8,), seed=41)
    x, y = toy_problem(n=256, seed=42)
    sgd = nnet.SgdConfig(learning_rate=0.05, epochs=10, batch_size=64, seed=43)
    result = nnet.train(net, x, y, CE, sgd)
    assert len(result.checkpoints) == 10
    assert len(result.epoch_losses) == 10
    assert result.epoch_losses[-1] < result.epoch_losses[0]
    np.testing.assert_array_equal(nnet.get_params(result.network), result.checkpoints[-1])
    # the input net is untouched
    assert not np.array_equal(nnet.get_params(net), result.checkpoints[-1])


def test_train_is_deterministic_under_seed():
    x, y = toy_problem(n=128, seed=44)
    sgd = nnet.SgdConfig(learning_rate=0.05, epochs=3, batch_size=32, seed=45)
    a = nnet.train(tiny_net(seed=46), x, y, CE, sgd)
    b = nnet.train(tiny_net(seed=46), x, y, CE, sgd)
    for ca, cb in zip(a.checkpoints, b.checkpoints):
        np.testing.assert_array_equal(ca, cb)
    assert a.epoch_losses == b.epoch_losses


def test_train_weight_decay_shrinks_parameters():
    x, y = toy_problem(n=128, seed=47)
    base = nnet.SgdConfig(learning_rate=0.05, epochs=10, batch_size=32, seed=48)
    free = nnet.train(tiny_net(seed=49), x, y, CE, base)
    decayed = nnet.train(
        tiny_net(seed=49), x, y, CE,
        nnet.SgdConfig(learning_rate=0.05, weight_decay=0.1, epochs=10, batch_size=32, seed=48),
    )
    assert np.linalg.norm(decayed.checkpoints[-1]) < np.linalg.norm(free.checkpoints[-1])


def test_train_divergence_names_the_epoch():
    # lr * weight_decay >> 1 multiplies every parameter by about -1e4 per
    # step, so the explosion is geometric regardless of the gradient values
    net = tiny_net(seed=51)
    x, y = toy_problem(n=64, seed=52)
    sgd = nnet.SgdConfig(
        learning_rate=1.0, weight_decay=1e4, epochs=200, batch_size=32, seed=53
    )
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(DivergenceError, match=r"diverged at epoch \d+"):
            nnet.train(net, x, y, CE, sgd)


def test_train_weighted_sampling_upweights_the_rare_class():
    # 5% positives with 1/count weights: positives fill about half of each batch
    rng = np.random.default_rng(54)
    y = (rng.random(1000) < 0.05).astype(np.int64)
    weights = np.where(y == 1, 1.0 / max(y.sum(), 1), 1.0 / (y.shape[0] - y.sum()))
    idx = nnet.draw_minibatch_indices(np.random.default_rng(55), weights, 100_000)
    assert abs(y[idx].mean() - 0.5) < 0.01


def test_train_validates_inputs():
    net = tiny_net()
    x, y = toy_problem(n=32)
    sgd = nnet.SgdConfig(learning_rate=0.1, epochs=1, seed=0)
    with pytest.raises(InputShapeError):
        nnet.train(net, x, y, CE, sgd, sample_weights=np.ones(31))
    with pytest.raises(ConfigError):
        nnet.train(net, x, y, CE, sgd, sample_weights=np.zeros(32))


# ---------------------------------------------------------------------------
# configs
# ---------------------------------------------------------------------------


def test_net_config_text_roundtrip():
    config = nnet.NetConfig(input_dim=7, hidden_dims=(64, 32), output_dim=3,
                            dropout_rate=0.2, seed=99)
    assert nnet.NetConfig.from_text(config.to_text()) == config
    with pytest.raises(FormatError):
        nnet.NetConfig.from_text("input_dim=3\n")


@pytest.mark.parametrize(
    "kwargs",
    [
        {"input_dim": 0, "hidden_dims": (4,), "output_dim": 2},
        {"input_dim": 3, "hidden_dims": (0,), "output_dim": 2},
        {"input_dim": 3, "hidden_dims": (4,), "output_dim": 1},
        {"input_dim": 3, "hidden_dims": (4,), "output_dim": 2, "dropout_rate": 1.0},
    ],
)
def test_net_config_validation(kwargs):
    with pytest.raises(ConfigError):
        nnet.NetConfig(**kwargs)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"learning_rate": -0.1},
        {"learning_rate": 0.1, "momentum": 1.0},
        {"learning_rate": 0.1, "weight_decay": -1.0},
        {"learning_rate": 0.1, "batch_size": 0},
        {"learning_rate": 0.1, "epochs": 0},
    ],
)
def test_sgd_config_validation(kwargs):
    with pytest.raises(ConfigError):
        nnet.SgdConfig(**kwargs)


# ---------------------------------------------------------------------------
# weight container
# ---------------------------------------------------------------------------


def test_checkpoint_roundtrip_is_bitwise(tmp_path):
    net = tiny_net(seed=61)
    params = nnet.get_params(net)
    sections = {"aux": np.array([1.5, -2.25]), "scalar": np.array([3.0])}
    path = tmp_path / "model.dfb1"
    nnet.write_checkpoint(path, net.config, params, sections)
    config, loaded, got = nnet.read_checkpoint(path)
    assert config == net.config
    np.testing.assert_array_equal(loaded, params)
    assert set(got) == {"aux", "scalar"}
    np.testing.assert_array_equal(got["aux"], sections["aux"])


def test_checkpoint_without_sections(tmp_path):
    net = tiny_net(seed=62)
    path = tmp_path / "model.dfb1"
    nnet.write_checkpoint(path, net.config, nnet.get_params(net))
    _, _, sections = nnet.read_checkpoint(path)
    assert sections == {}


def test_load_network_restores_forward(tmp_path):
    net = tiny_net(seed=63)
    path = tmp_path / "model.dfb1"
    nnet.write_checkpoint(path, net.config, nnet.get_params(net))
    loaded = nnet.load_network(path)
    x = np.random.default_rng(64).standard_normal((5, 4))
    np.testing.assert_array_equal(nnet.forward(loaded, x), nnet.forward(net, x))


def test_checkpoint_bad_magic_and_truncation(tmp_path):
    path = tmp_path / "bad.dfb1"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(FormatError, match="bad magic"):
        nnet.read_checkpoint(path)

    net = tiny_net(seed=65)
    good = tmp_path / "good.dfb1"
    nnet.write_checkpoint(good, net.config, nnet.get_params(net))
    clipped = tmp_path / "clipped.dfb1"
    clipped.write_bytes(good.read_bytes()[:-16])
    with pytest.raises(FormatError, match="truncated"):
        nnet.read_checkpoint(clipped)
