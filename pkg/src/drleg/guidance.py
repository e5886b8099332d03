"""Demonstration-based guidance: discriminators, guiders and the action-selection gate.

A discriminator answers "is this state close enough to the demonstrations to
be guided?"; a guider proposes an expert-like action for such a state. The
gate only hands control to the guider while the demonstrations still
outperform the current policy.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .numerics import Adam, Mlp
from .sac import sample_action

VARIANCE_FLOOR = 1e-6
SCALE_FLOOR = 1e-6


def demo_scales(states):
    """Per-dimension standard deviation of the demonstration states, floored."""
    return np.maximum(np.std(np.asarray(states, dtype=np.float64), axis=0), SCALE_FLOOR)


# ---------------------------------------------------------------- discriminators


@dataclass
class GmmDiscriminator:
    """Diagonal-covariance Gaussian mixture over demonstration states."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    threshold: float = 0.0
    log_likelihood_trace: list = field(default_factory=list)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        self.variances = np.atleast_2d(np.asarray(self.variances, dtype=np.float64))
        if abs(self.weights.sum() - 1.0) > 1e-9 or np.any(self.weights < 0):
            raise ValueError("mixture weights must lie on the simplex")
        if self.means.shape != self.variances.shape or len(self.weights) != len(self.means):
            raise ValueError("inconsistent mixture parameter shapes")

    @property
    def n_components(self):
        return len(self.weights)

    def component_log_densities(self, x):
        """``log(w_k) + log N(x | mu_k, diag var_k)`` for each row of x, shape (N, K)."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.means.shape[1]:
            raise ValueError(f"state has {x.shape[1]} dims, mixture has {self.means.shape[1]}")
        diff = x[:, None, :] - self.means[None, :, :]
        log_norm = -0.5 * np.sum(np.log(2 * np.pi * self.variances), axis=1)
        with np.errstate(divide="ignore"):
            log_w = np.log(self.weights)
        return log_w + log_norm - 0.5 * np.sum(diff ** 2 / self.variances, axis=2)

    def log_density(self, x):
        out = logsumexp(self.component_log_densities(x), axis=1)
        return out[0] if np.ndim(x) == 1 else out

    def density(self, x):
        return np.exp(self.log_density(x))

    def discriminate(self, state):
        return bool(self.density(state) > self.threshold)

    def to_dict(self):
        return {"weights": self.weights.tolist(), "means": self.means.tolist(),
                "variances": self.variances.tolist(), "threshold": self.threshold}

    @classmethod
    def from_dict(cls, d):
        return cls(d["weights"], d["means"], d["variances"], d["threshold"])


def _kmeans_pp(x, k, rng):
    centers = [x[rng.integers(len(x))]]
    for _ in range(1, k):
        d2 = np.min(((x[:, None, :] - np.array(centers)[None]) ** 2).sum(axis=2), axis=1)
        total = d2.sum()
        if total <= 0:
            centers.append(x[rng.integers(len(x))])
        else:
            centers.append(x[rng.choice(len(x), p=d2 / total)])
    return np.array(centers)


def fit_gmm(states, n_components=8, max_iters=200, tol=1e-6, rng=None, threshold_quantile=0.05):
    """EM for a diagonal Gaussian mixture.

    Means start from k-means++ seeding, variances from the per-dimension data
    variance. Iteration stops once the mean log-likelihood improves by less
    than ``tol``. The density threshold is set to the ``threshold_quantile``
    quantile of the fitted density over the training states.
    """
    x = np.asarray(states, dtype=np.float64)
    n, dim = x.shape
    k = int(n_components)
    if k < 1 or n < k:
        raise ValueError(f"need at least {k} states for {k} components, got {n}")
    if rng is None:
        rng = np.random.default_rng(0)
    means = _kmeans_pp(x, k, rng) if k > 1 else x.mean(axis=0, keepdims=True)
    variances = np.tile(np.maximum(x.var(axis=0), VARIANCE_FLOOR), (k, 1))
    gmm = GmmDiscriminator(np.full(k, 1.0 / k), means, variances)
    trace = gmm.log_likelihood_trace
    floored = False
    for it in range(max_iters + 1):
        comp = gmm.component_log_densities(x)
        log_px = logsumexp(comp, axis=1)
        trace.append(float(np.mean(log_px)))
        if len(trace) > 1 and trace[-1] - trace[-2] < tol:
            break
        if it == max_iters:
            break
        resp = np.exp(comp - log_px[:, None])
        nk = resp.sum(axis=0)
        # a component can lose all its points; keep it harmless with a tiny mass
        nk_safe = np.maximum(nk, 1e-300)
        means = (resp.T @ x) / nk_safe[:, None]
        variances = np.stack([(resp[:, j:j + 1] * (x - means[j]) ** 2).sum(axis=0) for j in range(k)]) / nk_safe[:, None]
        if np.any(variances < VARIANCE_FLOOR):
            floored = True
            variances = np.maximum(variances, VARIANCE_FLOOR)
        gmm.weights = nk / nk.sum()
        gmm.means, gmm.variances = means, variances
    if floored:
        warnings.warn("GMM component variance collapsed and was floored", RuntimeWarning, stacklevel=2)
    gmm.threshold = float(np.quantile(np.exp(gmm.log_density(x)), threshold_quantile))
    return gmm


def gmm_density(disc, state):
    return float(disc.density(state))


class FunctionalDiscriminator:
    """Guidable iff the nearest demonstration state is within ``threshold`` (scaled Euclidean)."""

    def __init__(self, demo_states, threshold=0.2, scales=None):
        self.demo_states = np.atleast_2d(np.asarray(demo_states, dtype=np.float64))
        if len(self.demo_states) == 0:
            raise ValueError("need at least one demonstration state")
        if threshold <= 0:
            raise ValueError("distance threshold must be positive")
        self.threshold = float(threshold)
        self.scales = demo_scales(self.demo_states) if scales is None else np.asarray(scales, dtype=np.float64)
        self._scaled = self.demo_states / self.scales

    def distances(self, state):
        q = np.asarray(state, dtype=np.float64) / self.scales
        return np.sqrt(((self._scaled - q) ** 2).sum(axis=1))

    def min_distance(self, state):
        return float(self.distances(state).min())

    def discriminate(self, state):
        return self.min_distance(state) <= self.threshold


def discriminate(disc, state):
    return disc.discriminate(state)


# ---------------------------------------------------------------- guiders


class FunctionalGuider:
    """Action of the nearest demonstration state plus Gaussian noise, clipped to the action box.

    Ties go to the lowest index.
    """

    def __init__(self, demo_states, demo_actions, action_low, action_high, sigma=None, scales=None):
        self.demo_states = np.atleast_2d(np.asarray(demo_states, dtype=np.float64))
        self.demo_actions = np.atleast_2d(np.asarray(demo_actions, dtype=np.float64))
        if len(self.demo_states) == 0:
            raise ValueError("cannot guide from an empty demonstration set")
        self.action_low = np.asarray(action_low, dtype=np.float64)
        self.action_high = np.asarray(action_high, dtype=np.float64)
        if sigma is None:
            sigma = 0.1 * (self.action_high - self.action_low) / 2
        self.sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), self.action_low.shape).copy()
        if np.any(self.sigma < 0):
            raise ValueError("guider noise must be nonnegative")
        self.scales = demo_scales(self.demo_states) if scales is None else np.asarray(scales, dtype=np.float64)
        self._scaled = self.demo_states / self.scales

    def nearest(self, state):
        q = np.asarray(state, dtype=np.float64) / self.scales
        return int(np.argmin(np.sqrt(((self._scaled - q) ** 2).sum(axis=1))))

    def guide(self, state, rng=None):
        a = self.demo_actions[self.nearest(state)].copy()
        if np.any(self.sigma > 0):
            a = a + self.sigma * rng.standard_normal(a.shape)
        return np.clip(a, self.action_low, self.action_high)


@dataclass
class BcGuider:
    net: Mlp
    state_mean: np.ndarray
    state_scale: np.ndarray
    action_low: np.ndarray
    action_high: np.ndarray
    loss_history: list = field(default_factory=list)

    def predict(self, states):
        return self.net((np.atleast_2d(states) - self.state_mean) / self.state_scale)

    def guide(self, state, rng=None):
        out = self.predict(state)
        out = out[0] if np.ndim(state) == 1 else out
        return np.clip(out, self.action_low, self.action_high)


def guide(guider, state, rng=None):
    return guider.guide(state, rng)


def train_bc_guider(demos, epochs=200, lr=1e-3, rng=None, hidden=(64, 64), batch_size=64,
                    action_low=None, action_high=None):
    """Regress demonstration actions on (standardized) states by minibatch Adam.

    ``batch_size=None`` trains full-batch. Returns a :class:`BcGuider` whose
    ``loss_history`` has one full-data MSE per epoch, starting with the
    untrained loss.
    """
    states, actions = np.asarray(demos.states), np.asarray(demos.actions)
    if len(states) == 0:
        raise ValueError("cannot train a guider on an empty demonstration set")
    if rng is None:
        rng = np.random.default_rng(0)
    mean = states.mean(axis=0)
    scale = demo_scales(states)
    x = (states - mean) / scale
    net = Mlp([states.shape[1], *hidden, actions.shape[1]], rng)
    low = actions.min(axis=0) if action_low is None else np.asarray(action_low, dtype=np.float64)
    high = actions.max(axis=0) if action_high is None else np.asarray(action_high, dtype=np.float64)
    guider = BcGuider(net, mean, scale, low, high)
    opt = Adam(net.params, lr=lr)
    n = len(x)
    bs = n if batch_size is None else min(batch_size, n)

    def full_loss():
        return float(np.mean((net(x) - actions) ** 2))

    guider.loss_history.append(full_loss())
    for _ in range(epochs):
        order = np.arange(n) if batch_size is None else rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            pred = net.forward(x[idx])
            resid = pred - actions[idx]
            grads, _ = net.backward(2.0 * resid / resid.size)
            opt.step(net.params, grads)
        loss = full_loss()
        if not np.isfinite(loss):
            raise FloatingPointError("behavior-cloning loss became non-finite")
        guider.loss_history.append(loss)
    return guider


# ---------------------------------------------------------------- gate


@dataclass
class GuidanceGate:
    """Fires iff enabled, ``r_demo > r_pi`` and the discriminator accepts the state."""

    discriminator: object
    guider: object
    r_demo: float
    enabled: bool = True
    r_pi: float = 0.0

    def check(self, state):
        """``(fires, reason)`` where reason is one of
        ``disabled``, ``policy_ahead``, ``out_of_support``, ``guided``."""
        if not self.enabled:
            return False, "disabled"
        if not self.r_demo > self.r_pi:
            return False, "policy_ahead"
        if not self.discriminator.discriminate(state):
            return False, "out_of_support"
        return True, "guided"


def select_action(gate, policy, state, rng, guide_rng=None):
    """Guider action when the gate fires, otherwise a policy sample. Returns ``(action, guided)``."""
    if gate is not None:
        fires, _ = gate.check(state)
        if fires:
            return gate.guider.guide(state, rng if guide_rng is None else guide_rng), True
    action, _ = sample_action(policy, state, rng)
    return action, False


def build_gate(demos, action_low, action_high, discriminator="functional", guider="functional",
               distance_threshold=0.2, guider_sigma=None, gmm_components=8, bc_epochs=200,
               rng=None, enabled=True):
    """Construct a gate from a demonstration set with the default variant settings."""
    if discriminator == "functional":
        disc = FunctionalDiscriminator(demos.states, distance_threshold)
    elif discriminator == "gmm":
        disc = fit_gmm(demos.states, gmm_components, rng=rng)
    else:
        raise ValueError(f"unknown discriminator {discriminator!r}")
    if guider == "functional":
        g = FunctionalGuider(demos.states, demos.actions, action_low, action_high, guider_sigma)
    elif guider == "bc":
        g = train_bc_guider(demos, bc_epochs, rng=rng, action_low=action_low, action_high=action_high)
    else:
        raise ValueError(f"unknown guider {guider!r}")
    return GuidanceGate(disc, g, demos.r_demo, enabled)
