import json

import numpy as np
import pytest

from dtmaps.nn import TrainConfig
from dtmaps.nonparametric import (
    MonotoneNet,
    MonotonePitModel,
    capacity_width,
    fit_nonparametric,
    sample_alphas,
)
from dtmaps.pit import CalibrationSet, PitSample
from dtmaps.synthetic import default_config


def small_model(seed=0, n=200, epochs=10):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 2))
    z = rng.uniform(size=n)
    model = fit_nonparametric(CalibrationSet(X, np.zeros(n)), PitSample(z), TrainConfig(epochs=epochs, seed=seed))
    return model, X, z


@pytest.mark.parametrize("n,width", [(10, 8), (49, 8), (50, 16), (199, 16), (200, 32), (999, 32), (1000, 64)])
def test_capacity_schedule(n, width):
    assert capacity_width(n) == width


def test_alpha_sampling_shape_and_range():
    a = sample_alphas(np.random.default_rng(0), 1000)
    assert a.shape == (1000, 8)
    assert np.all((a >= 0) & (a <= 1))
    assert a[:, 6].max() <= 0.1 and a[:, 7].min() >= 0.9


@pytest.mark.parametrize("seed", range(5))
def test_random_networks_are_monotone_with_pinned_endpoints(seed):
    rng = np.random.default_rng(seed)
    net = MonotoneNet(3, 16)
    params = net.init(rng)
    for v in params.values():
        v += rng.normal(size=v.shape)
    model = MonotonePitModel(net, params, np.zeros(3), np.ones(3), TrainConfig())
    X = rng.normal(size=(20, 3)) * 3
    alpha = np.linspace(0, 1, 501)
    G = model.cdf(np.broadcast_to(alpha, (20, 501)), X)
    assert np.all(np.diff(G, axis=1) >= -1e-12)
    assert np.allclose(G[:, 0], 0.0, atol=1e-12) and np.allclose(G[:, -1], 1.0, atol=1e-12)


def test_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    net = MonotoneNet(2, 6)
    params = net.init(rng)
    for v in params.values():
        v += 0.3 * rng.normal(size=v.shape)
    alpha = rng.uniform(size=25)
    Xs = rng.normal(size=(25, 2))
    target = (rng.uniform(size=25) <= alpha).astype(float)
    _, grads = net.loss_and_grad(params, alpha, Xs, target)
    h = 1e-6
    for key, arr in params.items():
        flat = arr.ravel()
        for j in rng.choice(flat.size, size=min(4, flat.size), replace=False):
            old = flat[j]
            flat[j] = old + h
            up, _ = net.loss_and_grad(params, alpha, Xs, target)
            flat[j] = old - h
            down, _ = net.loss_and_grad(params, alpha, Xs, target)
            flat[j] = old
            assert grads[key].ravel()[j] == pytest.approx((up - down) / (2 * h), rel=1e-4, abs=1e-8), key


def test_uniform_pit_recovers_identity():
    rng = np.random.default_rng(2)
    n = 5000
    X = rng.uniform(-2, 2, size=(n, 2))
    z = rng.uniform(size=n)
    cfg = default_config("nonparametric").replace(epochs=40, seed=0)
    model = fit_nonparametric(CalibrationSet(X, np.zeros(n)), PitSample(z), cfg)
    alpha = np.linspace(0, 1, 101)
    G = model.cdf(np.broadcast_to(alpha, (200, 101)), rng.uniform(-2, 2, size=(200, 2)))
    assert np.max(np.abs(G - alpha)) < 0.05


def test_brier_not_worse_than_identity_on_training_data():
    rng = np.random.default_rng(3)
    n = 1000
    X = rng.uniform(-1, 1, size=(n, 1))
    z = rng.uniform(size=n) ** np.where(X[:, 0] > 0, 2.0, 0.5)
    model = fit_nonparametric(CalibrationSet(X, np.zeros(n)), PitSample(z), TrainConfig(epochs=60, lr=5e-3, seed=0))
    alpha = rng.uniform(size=n)
    identity = float(np.mean((alpha - (z <= alpha)) ** 2))
    assert model.brier(X, z, alpha) <= identity


def test_flat_output_falls_back_to_identity_with_warning():
    model, X, _ = small_model()
    model.params["mono_v3"][:] = -1000.0
    alpha = np.array([0.1, 0.5, 0.9])
    with pytest.warns(RuntimeWarning, match="identity"):
        g = model.cdf(alpha, X[0])
    assert np.array_equal(g, alpha)
    _, flags = model.cdf(np.broadcast_to(alpha, (4, 3)), X[:4], return_flags=True)
    assert flags.all()


def test_serialization_roundtrip_is_exact():
    model, X, _ = small_model(epochs=3)
    back = MonotonePitModel.from_dict(json.loads(json.dumps(model.to_dict())))
    alpha = np.broadcast_to(np.linspace(0, 1, 11), (10, 11))
    assert np.array_equal(model.cdf(alpha, X[:10]), back.cdf(alpha, X[:10]))


def test_fit_is_deterministic():
    m1, X, _ = small_model(seed=4, epochs=4)
    m2, _, _ = small_model(seed=4, epochs=4)
    for k in m1.params:
        assert np.array_equal(m1.params[k], m2.params[k])
