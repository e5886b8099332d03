"""Small dense-network kernel: ReLU MLPs with hand-written backprop, Adam, RNG streams."""

import json
from pathlib import Path

import numpy as np

CHECKPOINT_VERSION = 1


class NumericsError(ValueError):
    """Raised for shape mismatches and non-finite parameters."""


def make_rng(seed, stream=None):
    """Counter-based (Philox) generator; ``stream`` selects an independent substream."""
    key = () if stream is None else (int(stream),)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=key)))


def split_streams(seed, names):
    """One independent generator per name, all derived from a master seed."""
    return {name: make_rng(seed, i) for i, name in enumerate(names)}


def glorot_uniform(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


class Mlp:
    """Fully connected net, ReLU hidden layers, identity output.

    Weights are stored as ``(fan_out, fan_in)`` matrices, so a layer computes
    ``x @ W.T + b``. Inputs may be a single vector or a batch of row vectors.
    """

    def __init__(self, layer_sizes, rng=None, weights=None, biases=None):
        layer_sizes = [int(n) for n in layer_sizes]
        if len(layer_sizes) < 2 or min(layer_sizes) < 1:
            raise NumericsError(f"bad layer sizes {layer_sizes}")
        self.layer_sizes = layer_sizes
        if weights is None:
            rng = make_rng(0) if rng is None else rng
            weights = [glorot_uniform(rng, n_in, n_out)
                       for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:])]
            biases = [np.zeros(n_out) for n_out in layer_sizes[1:]]
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            expected = (layer_sizes[i + 1], layer_sizes[i])
            if w.shape != expected or b.shape != (layer_sizes[i + 1],):
                raise NumericsError(f"layer {i}: weight {w.shape}, bias {b.shape}, expected {expected}")
        self._cache = None

    @property
    def in_dim(self):
        return self.layer_sizes[0]

    @property
    def out_dim(self):
        return self.layer_sizes[-1]

    @property
    def params(self):
        """Flat list [W0, b0, W1, b1, ...]; the arrays are live views."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def clone(self):
        return Mlp(self.layer_sizes, weights=[w.copy() for w in self.weights],
                   biases=[b.copy() for b in self.biases])

    def copy_from(self, other):
        for p, q in zip(self.params, other.params):
            p[...] = q

    def forward(self, x, cache=True):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        h = x[None, :] if single else x
        if h.shape[-1] != self.in_dim:
            raise NumericsError(f"input has {h.shape[-1]} features, net expects {self.in_dim}")
        acts = [h]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w.T + b
            h = z if i == last else np.maximum(z, 0.0)
            acts.append(h)
        if cache:
            self._cache = (acts, single)
        return h[0] if single else h

    def __call__(self, x):
        return self.forward(x, cache=False)

    def backward(self, output_grad, param_grads=True):
        """Gradient of <output, output_grad> (summed over the batch).

        Uses the activations cached by the most recent ``forward`` call.
        Returns ``(param_grads, input_grad)`` with ``param_grads`` ordered like
        :attr:`params`; pass ``param_grads=False`` when only the input gradient
        is needed and the first element will be ``None``.
        """
        if self._cache is None:
            raise RuntimeError("backward called without a cached forward pass")
        acts, single = self._cache
        g = np.asarray(output_grad, dtype=np.float64)
        g = g[None, :] if single else g
        if g.shape != acts[-1].shape:
            raise NumericsError(f"output_grad shape {g.shape} != output shape {acts[-1].shape}")
        grads = [None] * (2 * len(self.weights)) if param_grads else None
        for i in range(len(self.weights) - 1, -1, -1):
            if i != len(self.weights) - 1:
                g = g * (acts[i + 1] > 0.0)
            if param_grads:
                grads[2 * i] = g.T @ acts[i]
                grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.weights[i]
        return grads, (g[0] if single else g)

    def check_finite(self, name="net"):
        for i, p in enumerate(self.params):
            if not np.all(np.isfinite(p)):
                raise FloatingPointError(f"{name}: non-finite values in parameter {i}")

    def to_dict(self):
        return {
            "version": CHECKPOINT_VERSION,
            "layer_sizes": self.layer_sizes,
            "hidden_activation": "relu",
            "output_activation": "identity",
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("version") != CHECKPOINT_VERSION:
            raise NumericsError(f"unsupported checkpoint version {d.get('version')!r}")
        if d.get("hidden_activation") != "relu" or d.get("output_activation") != "identity":
            raise NumericsError("unsupported activation tags")
        return cls(d["layer_sizes"], weights=d["weights"], biases=d["biases"])

    def save(self, path):
        # json writes floats with repr(), which round-trips float64 exactly
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


class Adam:
    """Adam with bias correction. ``sgd=True`` switches to plain gradient descent."""

    def __init__(self, params, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8, sgd=False):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.sgd = sgd
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        """Update ``params`` in place."""
        if len(params) != len(grads) or len(params) != len(self.m):
            raise NumericsError("params/grads/state length mismatch")
        for p, g, m in zip(params, grads, self.m):
            if p.shape != g.shape or p.shape != m.shape:
                raise NumericsError(f"shape mismatch: param {p.shape}, grad {g.shape}, state {m.shape}")
        self.t += 1
        if self.sgd:
            for p, g in zip(params, grads):
                p -= self.lr * g
            return
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self):
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
                "sgd": self.sgd, "t": self.t, "m": self.m, "v": self.v}

    def load_state_dict(self, d):
        self.lr, self.beta1, self.beta2, self.eps = d["lr"], d["beta1"], d["beta2"], d["eps"]
        self.sgd, self.t = bool(d["sgd"]), int(d["t"])
        self.m = [np.array(a, dtype=np.float64) for a in d["m"]]
        self.v = [np.array(a, dtype=np.float64) for a in d["v"]]


def adam_step(params, grads, state):
    """Functional wrapper: one Adam update of ``params`` (in place); returns them with the state."""
    state.step(params, grads)
    return params, state


def gaussian_sample(rng, mean, std, deterministic=False):
    """``mean + std * xi`` with ``xi ~ N(0, I)``.

    Zero std entries are only accepted with ``deterministic=True``, which
    returns ``mean`` without consuming the generator.
    """
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    if deterministic:
        if np.any(std < 0):
            raise ValueError("std must be nonnegative")
        return mean.copy()
    if np.any(std <= 0):
        raise ValueError("std must be strictly positive")
    return mean + std * rng.standard_normal(np.broadcast(mean, std).shape)
