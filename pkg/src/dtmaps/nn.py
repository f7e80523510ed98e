"""Small numpy network pieces with hand-written backward passes.

Everything here works on float64 arrays of shape ``(n_rows, n_features)``.
Parameters live in plain dicts of arrays so that optimizers, gradient checks
and JSON serialization can walk them uniformly.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return expit(x)


def inverse_softplus(y):
    y = np.asarray(y, dtype=float)
    return y + np.log(-np.expm1(-y))


def relu(x):
    return np.maximum(x, 0.0)


def he_init(rng, n_in, n_out):
    return rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_in, n_out))


class TemporalMixer:
    """Learned linear mixing across a short time axis.

    Input rows are flattened ``(steps, channels)`` blocks. Each of
    ``n_filters`` filters takes a weighted sum over the time steps,
    separately for every channel, giving ``n_filters * channels`` outputs.
    """

    def __init__(self, steps, channels, n_filters=3):
        self.steps = int(steps)
        self.channels = int(channels)
        self.n_filters = int(n_filters)

    @property
    def n_in(self):
        return self.steps * self.channels

    @property
    def n_out(self):
        return self.n_filters * self.channels

    def init(self, rng, prefix="mix"):
        # Start close to "one filter per time step" so nothing is lost early on.
        w = np.eye(self.n_filters, self.steps) + 0.1 * rng.normal(size=(self.n_filters, self.steps))
        return {f"{prefix}_w": w, f"{prefix}_b": np.zeros(self.n_filters)}

    def forward(self, params, x, prefix="mix"):
        seq = x.reshape(x.shape[0], self.steps, self.channels)
        out = np.einsum("kt,ntc->nkc", params[f"{prefix}_w"], seq)
        out += params[f"{prefix}_b"][None, :, None]
        return out.reshape(x.shape[0], self.n_out), seq

    def backward(self, params, seq, grad_out, prefix="mix"):
        g = grad_out.reshape(seq.shape[0], self.n_filters, self.channels)
        grads = {
            f"{prefix}_w": np.einsum("nkc,ntc->kt", g, seq),
            f"{prefix}_b": g.sum(axis=(0, 2)),
        }
        grad_in = np.einsum("nkc,kt->ntc", g, params[f"{prefix}_w"])
        return grads, grad_in.reshape(seq.shape[0], -1)


class MLP:
    """ReLU multilayer perceptron with a linear output layer.

    An optional :class:`TemporalMixer` runs before the first dense layer.
    """

    def __init__(self, n_in, hidden, n_out, mixer=None, prefix="mlp"):
        self.n_in = int(n_in)
        self.hidden = tuple(int(h) for h in hidden)
        self.n_out = int(n_out)
        self.mixer = mixer
        self.prefix = prefix
        if mixer is not None and mixer.n_in != self.n_in:
            raise ValueError(f"mixer expects {mixer.n_in} inputs, network has {self.n_in}")

    @property
    def sizes(self):
        first = self.mixer.n_out if self.mixer is not None else self.n_in
        return (first, *self.hidden, self.n_out)

    def init(self, rng):
        params = {}
        if self.mixer is not None:
            params.update(self.mixer.init(rng, prefix=f"{self.prefix}_mix"))
        sizes = self.sizes
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            params[f"{self.prefix}_W{i}"] = he_init(rng, a, b)
            params[f"{self.prefix}_b{i}"] = np.zeros(b)
        return params

    def forward(self, params, x):
        cache = {"acts": []}
        h = x
        if self.mixer is not None:
            h, cache["seq"] = self.mixer.forward(params, h, prefix=f"{self.prefix}_mix")
        n_layers = len(self.sizes) - 1
        for i in range(n_layers):
            cache["acts"].append(h)
            h = h @ params[f"{self.prefix}_W{i}"] + params[f"{self.prefix}_b{i}"]
            if i < n_layers - 1:
                h = relu(h)
        return h, cache

    def backward(self, params, cache, grad_out):
        grads = {}
        n_layers = len(self.sizes) - 1
        g = grad_out
        for i in reversed(range(n_layers)):
            a_in = cache["acts"][i]
            grads[f"{self.prefix}_W{i}"] = a_in.T @ g
            grads[f"{self.prefix}_b{i}"] = g.sum(axis=0)
            g = g @ params[f"{self.prefix}_W{i}"].T
            if i > 0:
                # a_in is the ReLU output of layer i-1
                g = g * (a_in > 0.0)
        if self.mixer is not None:
            mix_grads, g = self.mixer.backward(params, cache["seq"], g, prefix=f"{self.prefix}_mix")
            grads.update(mix_grads)
        return grads, g


class Adam:
    """Adam with an optional L2 pull of selected parameters toward anchor values.

    ``anchors`` maps parameter names to the values they are shrunk toward;
    the penalty ``0.5 * weight_decay * ||p - anchor||^2`` is added to the
    loss being minimized. Parameters without an anchor are not penalized.
    """

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0, anchors=None):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.anchors = anchors or {}
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            if self.weight_decay and k in self.anchors:
                g = g + self.weight_decay * (params[k] - self.anchors[k])
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def weight_anchors(params, overrides=None):
    """Zero anchors for every weight matrix (keys ending in ``_W<i>``), plus overrides."""
    anchors = {k: np.zeros_like(v) for k, v in params.items() if k.rsplit("_", 1)[-1].startswith("W")}
    anchors.update(overrides or {})
    return anchors


def minibatches(rng, n, batch_size):
    """Yield index arrays for one epoch; a single full batch when n <= batch_size."""
    if n <= batch_size:
        yield np.arange(n)
        return
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def params_to_json(params):
    return {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in params.items()}


def params_from_json(doc):
    return {k: np.asarray(v["data"], dtype=float).reshape(v["shape"]) for k, v in doc.items()}


class TrainConfig:
    """Optimizer and architecture settings shared by both map estimators."""

    def __init__(self, lr=1e-3, epochs=500, batch_size=512, seed=0, hidden=(64, 64, 64),
                 floor=1e-3, weight_decay=0.0, n_checkpoints=10):
        self.lr = float(lr)
        self.epochs = int(epochs)
        self.batch_size = int(batch_size)
        self.seed = int(seed)
        self.hidden = tuple(int(h) for h in hidden)
        self.floor = float(floor)
        self.weight_decay = float(weight_decay)
        self.n_checkpoints = int(n_checkpoints)
        problems = []
        if not self.lr > 0:
            problems.append("lr must be positive")
        if self.epochs < 1:
            problems.append("epochs must be positive")
        if self.batch_size < 1:
            problems.append("batch_size must be positive")
        if any(h < 1 for h in self.hidden):
            problems.append("hidden sizes must be positive")
        if not self.floor > 0:
            problems.append("floor must be positive")
        if self.weight_decay < 0:
            problems.append("weight_decay must be non-negative")
        if problems:
            raise ValueError("; ".join(problems))

    def to_dict(self):
        return {
            "lr": self.lr, "epochs": self.epochs, "batch_size": self.batch_size,
            "seed": self.seed, "hidden": list(self.hidden), "floor": self.floor,
            "weight_decay": self.weight_decay, "n_checkpoints": self.n_checkpoints,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def replace(self, **changes):
        d = self.to_dict()
        d.update(changes)
        return type(self)(**d)

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.to_dict().items())
        return f"TrainConfig({args})"

    def __eq__(self, other):
        return isinstance(other, TrainConfig) and self.to_dict() == other.to_dict()


def checkpoint_epochs(epochs, n_checkpoints):
    n = max(1, min(n_checkpoints, epochs))
    return set(np.unique(np.linspace(epochs / n, epochs, n).round().astype(int)).tolist())
