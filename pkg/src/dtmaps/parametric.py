"""Parametric PIT map: a network predicts Kumaraswamy ``(a, b)`` from covariates.

The network is trained by minimizing the Kumaraswamy negative log-likelihood
of the PIT values, with hand-written backpropagation and Adam.
"""

from __future__ import annotations

import numpy as np

from .distributions import (
    Kumaraswamy,
    kumaraswamy_cdf,
    kumaraswamy_cdf_sf,
    kumaraswamy_logpdf,
    kumaraswamy_logpdf_grad,
)
from .nn import (
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
    weight_anchors,
)
from .pit import FitError, PitModel

OUTPUT_INIT_SCALE = 0.01


def check_fit_inputs(calib, pit):
    n = len(calib)
    if len(pit) != n:
        raise ValueError(f"{len(pit)} PIT values for {n} calibration pairs")
    if n < 2:
        raise FitError(f"need at least 2 calibration pairs, got {n}")
    z = pit.z
    if np.all(z == 0.0) or np.all(z == 1.0):
        raise FitError(f"degenerate PIT sample: all {n} values equal {z[0]:g} (an endpoint)")


def standardization(X):
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 1e-12, scale, 1.0)
    return mean, scale


class ParametricPitModel(PitModel):
    kind = "parametric"

    def __init__(self, net, params, x_mean, x_scale, config, history=()):
        self.net = net
        self.params = params
        self.x_mean = np.asarray(x_mean, dtype=float)
        self.x_scale = np.asarray(x_scale, dtype=float)
        self.config = config
        self.history = list(history)

    def _raw(self, X, params=None):
        Xs = (np.atleast_2d(X) - self.x_mean) / self.x_scale
        return self.net.forward(self.params if params is None else params, Xs)

    def theta(self, X):
        """Kumaraswamy ``(a, b)`` per covariate row, shape ``(n, 2)``."""
        raw, _ = self._raw(X)
        return self.config.floor + softplus(raw)

    def _cdf_rows(self, alpha, X):
        th = self.theta(X)
        return kumaraswamy_cdf(alpha, th[:, :1], th[:, 1:])

    def _pdf_rows(self, alpha, X):
        th = self.theta(X)
        return np.exp(kumaraswamy_logpdf(alpha, th[:, :1], th[:, 1:]))

    def _cdf_sf_rows(self, alpha, s, X):
        th = self.theta(X)
        return kumaraswamy_cdf_sf(alpha, s, th[:, :1], th[:, 1:])

    def at(self, x):
        a, b = self.theta(np.asarray(x, dtype=float).ravel())[0]
        return Kumaraswamy(a, b)

    def nll(self, X, z):
        th = self.theta(X)
        return -float(np.mean(kumaraswamy_logpdf(np.asarray(z, dtype=float), th[:, 0], th[:, 1])))

    def loss_and_grad(self, X, z, params=None):
        """Mean NLL and its gradient with respect to every network parameter."""
        params = self.params if params is None else params
        return _nll_and_grad(self.net, params, (X - self.x_mean) / self.x_scale, z, self.config.floor)

    def to_dict(self):
        return {
            "kind": self.kind,
            "architecture": {
                "n_in": self.net.n_in,
                "hidden": list(self.net.hidden),
                "n_out": self.net.n_out,
                "mixer": _mixer_doc(self.net.mixer),
            },
            "weights": params_to_json(self.params),
            "standardization": {"mean": self.x_mean.tolist(), "scale": self.x_scale.tolist()},
            "config": self.config.to_dict(),
            "seed": self.config.seed,
            "history": [list(h) for h in self.history],
        }

    @classmethod
    def from_dict(cls, doc):
        arch = doc["architecture"]
        net = MLP(arch["n_in"], arch["hidden"], arch["n_out"], mixer=_mixer_from_doc(arch.get("mixer")),
                  prefix="theta")
        std = doc["standardization"]
        return cls(net, params_from_json(doc["weights"]), std["mean"], std["scale"],
                   TrainConfig.from_dict(doc["config"]), [tuple(h) for h in doc.get("history", [])])


def _mixer_doc(mixer):
    if mixer is None:
        return None
    return {"steps": mixer.steps, "channels": mixer.channels, "n_filters": mixer.n_filters}


def _mixer_from_doc(doc):
    return None if doc is None else TemporalMixer(doc["steps"], doc["channels"], doc["n_filters"])


def kumaraswamy_nll_grad(z, a, b):
    """Mean Kumaraswamy NLL of ``z`` and its gradient in per-row ``(a, b)``.

    Gradients are for the mean, so each row carries a ``1/n`` factor.
    """
    n = z.shape[0]
    loss = -float(np.mean(kumaraswamy_logpdf(z, a, b)))
    da, db = kumaraswamy_logpdf_grad(z, a, b)
    return loss, -da / n, -db / n


def _nll_and_grad(net, params, Xs, z, floor):
    raw, cache = net.forward(params, Xs)
    theta = floor + softplus(raw)
    loss, ga, gb = kumaraswamy_nll_grad(z, theta[:, 0], theta[:, 1])
    g_raw = np.stack([ga, gb], axis=1) * sigmoid(raw)
    grads, _ = net.backward(params, cache, g_raw)
    return loss, grads


def fit_parametric(calib, pit, config=None, mixer=None):
    """Fit ``x -> (a(x), b(x))`` by Kumaraswamy maximum likelihood.

    The network starts at the uniform member ``a = b = 1`` (the identity
    map). Pass a :class:`~dtmaps.nn.TemporalMixer` for sequence features.
    """
    config = config or TrainConfig()
    check_fit_inputs(calib, pit)
    X = calib.features
    z = pit.z
    x_mean, x_scale = standardization(X)
    Xs = (X - x_mean) / x_scale

    rng = np.random.default_rng(config.seed)
    net = MLP(X.shape[1], config.hidden, 2, mixer=mixer, prefix="theta")
    params = net.init(rng)
    last = len(net.sizes) - 2
    params[f"theta_W{last}"] *= OUTPUT_INIT_SCALE
    params[f"theta_b{last}"][:] = inverse_softplus(1.0 - config.floor)

    # prior pulls weights to 0 and the output bias to the identity map;
    # its weight relative to the mean NLL shrinks like 1/n
    anchors = weight_anchors(params, {f"theta_b{last}": params[f"theta_b{last}"].copy()})
    opt = Adam(params, lr=config.lr, weight_decay=config.weight_decay / len(z), anchors=anchors)
    marks = checkpoint_epochs(config.epochs, config.n_checkpoints)
    history = []
    for epoch in range(1, config.epochs + 1):
        for idx in minibatches(rng, len(z), config.batch_size):
            loss, grads = _nll_and_grad(net, params, Xs[idx], z[idx], config.floor)
            if not np.isfinite(loss):
                raise FitError(f"non-finite training loss at epoch {epoch}")
            opt.step(params, grads)
        if epoch in marks:
            full, _ = _nll_and_grad(net, params, Xs, z, config.floor)
            history.append((epoch, full))
    return ParametricPitModel(net, params, x_mean, x_scale, config, history)
