"""Nonparametric PIT map: a network monotone in alpha, fit to ``1{Z <= alpha}``.

Architecture (``w`` hidden units, chosen from the calibration size):

    c = covariate MLP(x)                       -> two additive offsets c1, c2
    a1 = tanh(alpha * softplus(v1) + c1)
    a2 = tanh(a1 @ softplus(V2) + c2)
    h  = sigmoid(a2 @ softplus(v3) + b3)

Every weight on the path from alpha to the output is a softplus of a free
parameter, and every activation on that path is increasing, so ``h`` is
nondecreasing in alpha whatever the parameters are. The map reported to
callers is ``(h(alpha) - h(0)) / (h(1) - h(0))``, which pins the endpoints.
"""

from __future__ import annotations

import warnings

import numpy as np

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
from .parametric import check_fit_inputs, standardization
from .pit import PitModel, _broadcast, _check_alpha

ALPHAS_PER_PAIR = 8
DEGENERATE_SPAN = 1e-12


def capacity_width(n):
    """Hidden width for a calibration set of size ``n``."""
    if n < 50:
        return 8
    if n < 200:
        return 16
    if n < 1000:
        return 32
    return 64


def sample_alphas(rng, n_pairs):
    """Eight training levels per pair: six uniform, one near each endpoint."""
    a = np.empty((n_pairs, ALPHAS_PER_PAIR))
    a[:, :6] = rng.uniform(0.0, 1.0, size=(n_pairs, 6))
    a[:, 6] = rng.uniform(0.0, 0.1, size=n_pairs)
    a[:, 7] = rng.uniform(0.9, 1.0, size=n_pairs)
    return a


class MonotoneNet:
    def __init__(self, n_in, width, cov_hidden=None, mixer=None):
        self.n_in = int(n_in)
        self.width = int(width)
        self.cov_hidden = tuple(cov_hidden) if cov_hidden is not None else (self.width,)
        self.cov = MLP(self.n_in, self.cov_hidden, 2 * self.width, mixer=mixer, prefix="cov")

    def init(self, rng):
        w = self.width
        params = self.cov.init(rng)
        last = len(self.cov.sizes) - 2
        params[f"cov_W{last}"] *= 0.1
        # first-layer units step up at spread-out alpha thresholds
        slopes = rng.uniform(1.0, 8.0, size=w)
        thresholds = rng.uniform(0.0, 1.0, size=w)
        params["mono_v1"] = inverse_softplus(slopes)
        params["mono_b1"] = -slopes * thresholds
        params["mono_V2"] = inverse_softplus(rng.uniform(0.05, 2.0, size=(w, w)) / np.sqrt(w))
        params["mono_b2"] = np.zeros(w)
        params["mono_v3"] = inverse_softplus(rng.uniform(0.05, 2.0, size=w) / np.sqrt(w))
        params["mono_b3"] = np.zeros(1)
        return params

    def forward(self, params, alpha, Xs, c=None):
        """Raw monotone output ``h`` for paired ``alpha`` (n,) and rows ``Xs`` (n, d)."""
        if c is None:
            c, cov_cache = self.cov.forward(params, Xs)
        else:
            cov_cache = None
        w = self.width
        c1, c2 = c[:, :w], c[:, w:]
        v1 = softplus(params["mono_v1"])
        V2 = softplus(params["mono_V2"])
        v3 = softplus(params["mono_v3"])
        a1 = np.tanh(alpha[:, None] * v1 + params["mono_b1"] + c1)
        a2 = np.tanh(a1 @ V2 + params["mono_b2"] + c2)
        h = sigmoid(a2 @ v3 + params["mono_b3"][0])
        cache = {"alpha": alpha, "a1": a1, "a2": a2, "h": h, "cov": cov_cache}
        return h, cache

    def backward_alpha_path(self, params, cache, grad_h):
        """Gradients of the alpha-path parameters and of the covariate offsets."""
        alpha, a1, a2, h = cache["alpha"], cache["a1"], cache["a2"], cache["h"]
        go = grad_h * h * (1.0 - h)
        grads = {
            "mono_v3": (a2.T @ go) * sigmoid(params["mono_v3"]),
            "mono_b3": np.array([go.sum()]),
        }
        gu2 = go[:, None] * softplus(params["mono_v3"])[None, :] * (1.0 - a2 * a2)
        grads["mono_V2"] = (a1.T @ gu2) * sigmoid(params["mono_V2"])
        grads["mono_b2"] = gu2.sum(axis=0)
        gu1 = (gu2 @ softplus(params["mono_V2"]).T) * (1.0 - a1 * a1)
        grads["mono_v1"] = (alpha[:, None] * gu1).sum(axis=0) * sigmoid(params["mono_v1"])
        grads["mono_b1"] = gu1.sum(axis=0)
        return grads, np.concatenate([gu1, gu2], axis=1)

    def backward(self, params, cache, grad_h):
        grads, gc = self.backward_alpha_path(params, cache, grad_h)
        cov_grads, _ = self.cov.backward(params, cache["cov"], gc)
        grads.update(cov_grads)
        return grads

    def normalized(self, params, alpha, Xs):
        """Endpoint-normalized output and the pieces needed for its gradient."""
        n = alpha.shape[0]
        c, cov_cache = self.cov.forward(params, Xs)
        stacked_alpha = np.concatenate([alpha, np.zeros(n), np.ones(n)])
        stacked_c = np.concatenate([c, c, c])
        h, cache = self.forward(params, stacked_alpha, None, c=stacked_c)
        h_a, h0, h1 = h[:n], h[n:2 * n], h[2 * n:]
        span = h1 - h0
        return (h_a - h0) / np.maximum(span, DEGENERATE_SPAN), (h_a, h0, h1, span, cache, cov_cache)

    def loss_and_grad(self, params, alpha, Xs, target):
        n = alpha.shape[0]
        g, (h_a, h0, h1, span, cache, cov_cache) = self.normalized(params, alpha, Xs)
        resid = g - target
        loss = float(np.mean(resid * resid))
        dg = 2.0 * resid / n
        D = np.maximum(span, DEGENERATE_SPAN)
        grad_h = np.concatenate([dg / D, dg * (h_a - h1) / D ** 2, -dg * (h_a - h0) / D ** 2])
        grads, gc = self.backward_alpha_path(params, cache, grad_h)
        # the three stacked passes share one covariate pass
        gc = gc[:n] + gc[n:2 * n] + gc[2 * n:]
        cov_grads, _ = self.cov.backward(params, cov_cache, gc)
        grads.update(cov_grads)
        return loss, grads


class MonotonePitModel(PitModel):
    kind = "nonparametric"

    def __init__(self, net, params, x_mean, x_scale, config, history=()):
        self.net = net
        self.params = params
        self.x_mean = np.asarray(x_mean, dtype=float)
        self.x_scale = np.asarray(x_scale, dtype=float)
        self.config = config
        self.history = list(history)

    def _std(self, X):
        return (np.atleast_2d(X) - self.x_mean) / self.x_scale

    def raw(self, alpha, X):
        """Unnormalized monotone output ``h(alpha | x)`` for paired inputs."""
        h, _ = self.net.forward(self.params, np.asarray(alpha, dtype=float), self._std(X))
        return h

    def evaluate(self, alpha, X):
        """Normalized map and a per-row flag marking degenerate normalizers.

        ``alpha`` has shape ``(n, m)`` against ``X`` of shape ``(n, d)``.
        Flagged rows fall back to the identity map.
        """
        alpha = np.asarray(alpha, dtype=float)
        n, m = alpha.shape
        Xs = self._std(X)
        c, _ = self.net.cov.forward(self.params, Xs)
        c_rep = np.repeat(c, m, axis=0)
        h, _ = self.net.forward(self.params, alpha.ravel(), None, c=c_rep)
        h0, _ = self.net.forward(self.params, np.zeros(n), None, c=c)
        h1, _ = self.net.forward(self.params, np.ones(n), None, c=c)
        span = h1 - h0
        degenerate = span <= DEGENERATE_SPAN
        safe = np.where(degenerate, 1.0, span)
        g = (h.reshape(n, m) - h0[:, None]) / safe[:, None]
        g = np.where(degenerate[:, None], alpha, np.clip(g, 0.0, 1.0))
        return g, degenerate

    def _cdf_rows(self, alpha, X):
        g, degenerate = self.evaluate(alpha, X)
        if degenerate.any():
            warnings.warn(f"{int(degenerate.sum())} rows with a flat monotone output; using the identity map",
                          RuntimeWarning, stacklevel=3)
        return g

    def cdf(self, alpha, X, return_flags=False):
        if not return_flags:
            return super().cdf(alpha, X)
        a2, X2, shape = _broadcast(alpha, X)
        _check_alpha(a2)
        g, degenerate = self.evaluate(a2, X2)
        return g.reshape(shape), degenerate

    def brier(self, X, z, alpha):
        """Mean squared error of the map against ``1{z <= alpha}`` on paired inputs."""
        g = self.cdf(np.asarray(alpha, dtype=float), X)
        return float(np.mean((g - (np.asarray(z) <= alpha)) ** 2))

    def to_dict(self):
        return {
            "kind": self.kind,
            "architecture": {
                "n_in": self.net.n_in,
                "width": self.net.width,
                "cov_hidden": list(self.net.cov_hidden),
                "mixer": None if self.net.cov.mixer is None else {
                    "steps": self.net.cov.mixer.steps,
                    "channels": self.net.cov.mixer.channels,
                    "n_filters": self.net.cov.mixer.n_filters,
                },
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
        mix = arch.get("mixer")
        mixer = None if mix is None else TemporalMixer(mix["steps"], mix["channels"], mix["n_filters"])
        net = MonotoneNet(arch["n_in"], arch["width"], arch["cov_hidden"], mixer=mixer)
        std = doc["standardization"]
        return cls(net, params_from_json(doc["weights"]), std["mean"], std["scale"],
                   TrainConfig.from_dict(doc["config"]), [tuple(h) for h in doc.get("history", [])])


def fit_nonparametric(calib, pit, config=None, mixer=None, width=None):
    """Fit the monotone map by least squares on ``1{z_i <= alpha}``.

    Fresh training levels are drawn for every pair at every epoch. The
    hidden width follows :func:`capacity_width` unless ``width`` is given;
    ``config.hidden`` is not used here.
    """
    config = config or TrainConfig()
    check_fit_inputs(calib, pit)
    X = calib.features
    z = pit.z
    n = len(z)
    x_mean, x_scale = standardization(X)
    Xs = (X - x_mean) / x_scale

    rng = np.random.default_rng(config.seed)
    net = MonotoneNet(X.shape[1], width or capacity_width(n), mixer=mixer)
    params = net.init(rng)
    opt = Adam(params, lr=config.lr, weight_decay=config.weight_decay / n, anchors=weight_anchors(params))
    marks = checkpoint_epochs(config.epochs, config.n_checkpoints)
    history = []
    rows = np.repeat(np.arange(n), ALPHAS_PER_PAIR)
    for epoch in range(1, config.epochs + 1):
        alpha = sample_alphas(rng, n).ravel()
        target = (z[rows] <= alpha).astype(float)
        for idx in minibatches(rng, alpha.shape[0], config.batch_size):
            _, grads = net.loss_and_grad(params, alpha[idx], Xs[rows[idx]], target[idx])
            opt.step(params, grads)
        if epoch in marks:
            loss, _ = net.loss_and_grad(params, alpha, Xs[rows], target)
            history.append((epoch, loss))
    return MonotonePitModel(net, params, x_mean, x_scale, config, history)
