import numpy as np
import pytest

from dtmaps.nn import (
    MLP,
    Adam,
    TemporalMixer,
    TrainConfig,
    checkpoint_epochs,
    inverse_softplus,
    minibatches,
    params_from_json,
    params_to_json,
    sigmoid,
    softplus,
)


def numeric_grad(f, params, key, h=1e-6):
    g = np.zeros_like(params[key])
    it = np.nditer(params[key], flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = params[key][i]
        params[key][i] = old + h
        up = f()
        params[key][i] = old - h
        down = f()
        params[key][i] = old
        g[i] = (up - down) / (2 * h)
    return g


def test_softplus_is_stable_and_inverts():
    x = np.array([-800.0, -30.0, 0.0, 3.0, 800.0])
    y = softplus(x)
    assert np.all(np.isfinite(y)) and np.all(y >= 0)
    assert y[-1] == 800.0
    z = np.array([1e-3, 0.5, 2.0, 40.0])
    assert np.allclose(softplus(inverse_softplus(z)), z, rtol=1e-12)


def test_sigmoid_matches_logistic():
    x = np.linspace(-30, 30, 61)
    assert np.allclose(sigmoid(x), 1 / (1 + np.exp(-x)), rtol=1e-12, atol=1e-300)


@pytest.mark.parametrize("with_mixer", [False, True])
def test_mlp_backward_matches_finite_differences(with_mixer):
    rng = np.random.default_rng(0)
    mixer = TemporalMixer(3, 4) if with_mixer else None
    net = MLP(12, (6, 5), 2, mixer=mixer, prefix="t")
    params = net.init(rng)
    X = rng.normal(size=(7, 12))
    W = rng.normal(size=(7, 2))

    def loss():
        out, _ = net.forward(params, X)
        return float(np.sum(out * W))

    out, cache = net.forward(params, X)
    grads, _ = net.backward(params, cache, W)
    for key in params:
        assert np.allclose(grads[key], numeric_grad(loss, params, key), rtol=1e-5, atol=1e-7), key


def test_adam_minimizes_quadratic():
    params = {"w": np.array([5.0, -3.0])}
    opt = Adam(params, lr=0.1)
    for _ in range(500):
        opt.step(params, {"w": 2 * params["w"]})
    assert np.max(np.abs(params["w"])) < 1e-2


def test_adam_weight_decay_pulls_to_anchor():
    params = {"w": np.array([0.0])}
    opt = Adam(params, lr=0.05, weight_decay=1.0, anchors={"w": np.array([2.0])})
    for _ in range(2000):
        opt.step(params, {"w": np.zeros(1)})
    assert params["w"][0] == pytest.approx(2.0, abs=1e-2)


def test_minibatches_cover_every_index_once():
    rng = np.random.default_rng(1)
    batches = list(minibatches(rng, 1300, 512))
    assert [len(b) for b in batches] == [512, 512, 276]
    assert np.array_equal(np.sort(np.concatenate(batches)), np.arange(1300))
    assert len(list(minibatches(rng, 100, 512))) == 1


def test_params_json_roundtrip_is_exact():
    rng = np.random.default_rng(2)
    params = MLP(3, (4,), 2).init(rng)
    back = params_from_json(params_to_json(params))
    for k in params:
        assert np.array_equal(params[k], back[k])


def test_train_config_reports_all_problems():
    with pytest.raises(ValueError) as err:
        TrainConfig(lr=0, epochs=0, batch_size=-1, floor=0)
    msg = str(err.value)
    for word in ("lr", "epochs", "batch", "floor"):
        assert word in msg


def test_train_config_roundtrip():
    cfg = TrainConfig(lr=2e-3, hidden=(8, 8), seed=4)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.replace(seed=5).seed == 5


def test_checkpoint_epochs_include_last():
    marks = checkpoint_epochs(300, 10)
    assert max(marks) == 300 and len(marks) == 10
