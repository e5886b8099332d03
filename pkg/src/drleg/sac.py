"""Soft actor-critic with a state-value network, twin Q-networks and a tanh-squashed Gaussian policy.

Losses follow the V-network formulation: Q regresses onto ``r + gamma * V_target(s')``,
V regresses onto ``min(Q1, Q2)(s, a~) - alpha * log pi(a~|s)`` and the policy
maximizes the same quantity through the reparameterized sample ``a~``.
All gradients are hand-derived; ``tests/test_gradients.py`` checks them
against finite differences.
"""

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import Adam, Mlp

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
_HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


def _log1m_tanh_sq(u):
    # log(1 - tanh(u)^2) without cancellation for large |u|
    return 2.0 * (math.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))


class GaussianPolicy:
    """State -> (mean, log std) trunk; actions are ``center + half * tanh(u)``."""

    def __init__(self, obs_dim, act_dim, action_low, action_high, hidden=(64, 64), rng=None, net=None):
        self.obs_dim, self.act_dim = obs_dim, act_dim
        self.action_low = np.asarray(action_low, dtype=np.float64)
        self.action_high = np.asarray(action_high, dtype=np.float64)
        self.center = 0.5 * (self.action_high + self.action_low)
        self.half = 0.5 * (self.action_high - self.action_low)
        self.net = net if net is not None else Mlp([obs_dim, *hidden, 2 * act_dim], rng)

    def heads(self, s, cache=True):
        out = self.net.forward(np.atleast_2d(s), cache=cache)
        mu = out[:, :self.act_dim]
        raw = out[:, self.act_dim:]
        log_std = np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)
        return mu, log_std, (raw >= LOG_STD_MIN) & (raw <= LOG_STD_MAX)

    def squash(self, u):
        return self.center + self.half * np.tanh(u)

    def log_prob_from_noise(self, u, xi, log_std):
        """log density of the squashed action given the pre-squash sample ``u = mu + std * xi``."""
        gauss = -0.5 * xi ** 2 - log_std - _HALF_LOG_2PI
        return (gauss - _log1m_tanh_sq(u) - np.log(self.half)).sum(axis=-1)

    def log_prob(self, s, action):
        """log density of an environment action; ``-inf`` on or outside the bounds."""
        mu, log_std, _ = self.heads(s, cache=False)
        y = (np.atleast_2d(action) - self.center) / self.half
        inside = np.all(np.abs(y) < 1.0, axis=-1)
        u = np.arctanh(np.where(np.abs(y) < 1.0, y, 0.0))
        return np.where(inside, self.log_prob_from_noise(u, (u - mu) / np.exp(log_std), log_std), -np.inf)

    def act(self, obs, deterministic=True, rng=None):
        """Single-state action for rollouts."""
        a, _ = sample_action(self, obs, rng, deterministic=deterministic)
        return a

    def clone(self):
        return GaussianPolicy(self.obs_dim, self.act_dim, self.action_low, self.action_high,
                              net=self.net.clone())


def sample_action(policy, state, rng, deterministic=False, xi=None):
    """Reparameterized draw ``tanh(mu + std * xi)`` rescaled to the action box.

    Returns ``(action, log_prob)``; a single state gives an action vector and a
    scalar log-prob, a batch gives ``(N, act_dim)`` and ``(N,)``.
    """
    state = np.asarray(state, dtype=np.float64)
    single = state.ndim == 1
    mu, log_std, _ = policy.heads(state, cache=False)
    if xi is None:
        xi = np.zeros_like(mu) if deterministic else rng.standard_normal(mu.shape)
    xi = np.reshape(xi, mu.shape)
    u = mu + np.exp(log_std) * xi
    action = policy.squash(u)
    logp = policy.log_prob_from_noise(u, xi, log_std)
    if single:
        return action[0], float(logp[0])
    return action, logp


@dataclass
class SoftCritics:
    q1: Mlp
    q2: Mlp
    v: Mlp
    v_target: Mlp
    alpha: float = 0.2
    gamma: float = 0.99
    rho: float = 0.995

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ValueError("alpha must be nonnegative")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0 <= self.rho <= 1:
            raise ValueError("rho must lie in [0, 1]")
        if self.v_target.layer_sizes != self.v.layer_sizes:
            raise ValueError("v_target must have the same shape as v")

    @classmethod
    def create(cls, obs_dim, act_dim, hidden=(64, 64), rng=None, **kw):
        q1 = Mlp([obs_dim + act_dim, *hidden, 1], rng)
        q2 = Mlp([obs_dim + act_dim, *hidden, 1], rng)
        v = Mlp([obs_dim, *hidden, 1], rng)
        return cls(q1, q2, v, v.clone(), **kw)

    def swapped(self):
        return SoftCritics(self.q2, self.q1, self.v, self.v_target, self.alpha, self.gamma, self.rho)


def _q(net, s, a, cache=False):
    return net.forward(np.concatenate([s, a], axis=1), cache=cache)[:, 0]


def compute_targets(critics, policy, batch, rng=None, xi=None):
    """Regression targets ``(y_q, y_v)``; both are plain arrays (no gradient path)."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    y_q = batch.r + critics.gamma * (1.0 - batch.terminal) * critics.v_target(batch.s_next)[:, 0]
    a_new, logp = sample_action(policy, batch.s, rng, xi=xi)
    q_min = np.minimum(_q(critics.q1, batch.s, a_new), _q(critics.q2, batch.s, a_new))
    y_v = q_min - critics.alpha * logp
    return y_q, y_v


def q_loss_and_grads(q_net, s, a, y_q):
    """``mean(0.5 (Q(s,a) - y)^2)`` and its parameter gradients."""
    q = _q(q_net, s, a, cache=True)
    resid = q - y_q
    grads, _ = q_net.backward(resid[:, None] / len(resid))
    return 0.5 * float(np.mean(resid ** 2)), grads


def v_loss_and_grads(v_net, s, y_v):
    v = v_net.forward(s)[:, 0]
    resid = v - y_v
    grads, _ = v_net.backward(resid[:, None] / len(resid))
    return 0.5 * float(np.mean(resid ** 2)), grads


def policy_objective_and_grads(policy, critics, s, xi):
    """Objective ``mean(min Q(s, f(s)) - alpha log pi(f(s)|s))`` and the gradient of its negation.

    The gradient flows through the sample into the Q-networks' action input and
    into the log-density (both through the sample and through log std).
    Critic parameters are only read.
    """
    n = len(s)
    mu, log_std, in_range = policy.heads(s)
    std = np.exp(log_std)
    u = mu + std * xi
    th = np.tanh(u)
    a = policy.center + policy.half * th
    logp = policy.log_prob_from_noise(u, xi, log_std)

    q1 = _q(critics.q1, s, a, cache=True)
    q2 = _q(critics.q2, s, a, cache=True)
    pick1 = (q1 <= q2).astype(np.float64)
    _, g1 = critics.q1.backward(pick1[:, None], param_grads=False)
    _, g2 = critics.q2.backward((1.0 - pick1)[:, None], param_grads=False)
    dq_da = (g1 + g2)[:, s.shape[1]:]
    q_min = np.minimum(q1, q2)

    alpha = critics.alpha
    # loss = alpha * logp - q_min, per sample
    dl_du = alpha * 2.0 * th - dq_da * policy.half * (1.0 - th ** 2)
    dl_dlogstd = (dl_du * std * xi - alpha) * in_range
    grads, _ = policy.net.backward(np.concatenate([dl_du, dl_dlogstd], axis=1) / n)
    objective = float(np.mean(q_min - alpha * logp))
    return objective, grads


def q_update(critics, batch, y_q, optimizers):
    """One step on each Q-network against shared targets; returns the mean of both losses."""
    losses = []
    for net, opt in zip((critics.q1, critics.q2), optimizers):
        loss, grads = q_loss_and_grads(net, batch.s, batch.a, y_q)
        _abort_on_nan(loss, "Q loss")
        opt.step(net.params, grads)
        losses.append(loss)
    return 0.5 * (losses[0] + losses[1])


def v_update(critics, batch, y_v, optimizer):
    loss, grads = v_loss_and_grads(critics.v, batch.s, y_v)
    _abort_on_nan(loss, "V loss")
    optimizer.step(critics.v.params, grads)
    return loss


def policy_update(policy, critics, batch, optimizer, rng=None, xi=None):
    """Gradient-ascent step on the policy objective; returns the objective before the step."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    if xi is None:
        xi = rng.standard_normal((len(batch), policy.act_dim))
    objective, grads = policy_objective_and_grads(policy, critics, batch.s, xi)
    _abort_on_nan(objective, "policy objective")
    optimizer.step(policy.net.params, grads)
    return objective


def polyak_update(critics):
    """``target <- rho * target + (1 - rho) * online`` for every V-target parameter."""
    rho = critics.rho
    for t, o in zip(critics.v_target.params, critics.v.params):
        t *= rho
        t += (1.0 - rho) * o


def _abort_on_nan(value, what):
    if not np.isfinite(value):
        raise FloatingPointError(f"{what} is not finite ({value}); aborting training")


class SacAgent:
    """Policy, critics and their optimizers, plus the per-batch update sequence."""

    def __init__(self, obs_dim, act_dim, action_low, action_high, hidden=(64, 64), lr=3e-4,
                 alpha=0.2, gamma=0.99, rho=0.995, sgd=False, rng=None):
        self.policy = GaussianPolicy(obs_dim, act_dim, action_low, action_high, hidden, rng)
        self.critics = SoftCritics.create(obs_dim, act_dim, hidden, rng, alpha=alpha, gamma=gamma, rho=rho)
        self.optimizers = {
            name: Adam(net.params, lr=lr, sgd=sgd)
            for name, net in self.networks().items() if name != "v_target"
        }

    def networks(self):
        c = self.critics
        return {"policy": self.policy.net, "q1": c.q1, "q2": c.q2, "v": c.v, "v_target": c.v_target}

    def update(self, batch, rng):
        """Targets, Q step, V step, policy step, Polyak step; returns the three losses."""
        y_q, y_v = compute_targets(self.critics, self.policy, batch, rng)
        loss_q = q_update(self.critics, batch, y_q, (self.optimizers["q1"], self.optimizers["q2"]))
        loss_v = v_update(self.critics, batch, y_v, self.optimizers["v"])
        objective = policy_update(self.policy, self.critics, batch, self.optimizers["policy"], rng)
        polyak_update(self.critics)
        return loss_q, loss_v, objective

    def check_finite(self):
        for name, net in self.networks().items():
            net.check_finite(name)

    def save(self, directory, config_hash):
        """Checkpoint bundle: one JSON file per network, optimizer states, manifest with config hash."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for name, net in self.networks().items():
            net.save(d / f"{name}.json")
        arrays = {}
        meta = {}
        for name, opt in self.optimizers.items():
            st = opt.state_dict()
            meta[name] = {k: st[k] for k in ("lr", "beta1", "beta2", "eps", "sgd", "t")}
            for i, (m, v) in enumerate(zip(st["m"], st["v"])):
                arrays[f"{name}.m.{i}"] = m
                arrays[f"{name}.v.{i}"] = v
        np.savez(d / "optimizers.npz", **arrays)
        c = self.critics
        manifest = {"config_hash": config_hash, "optimizers": meta,
                    "alpha": c.alpha, "gamma": c.gamma, "rho": c.rho,
                    "action_low": self.policy.action_low.tolist(),
                    "action_high": self.policy.action_high.tolist()}
        (d / "manifest.json").write_text(json.dumps(manifest, indent=1))

    @classmethod
    def load(cls, directory, config_hash=None):
        d = Path(directory)
        manifest = json.loads((d / "manifest.json").read_text())
        if config_hash is not None and manifest["config_hash"] != config_hash:
            raise ValueError(f"checkpoint config hash {manifest['config_hash']} != expected {config_hash}")
        nets = {name: Mlp.load(d / f"{name}.json") for name in ("policy", "q1", "q2", "v", "v_target")}
        agent = cls.__new__(cls)
        pol = nets["policy"]
        agent.policy = GaussianPolicy(pol.in_dim, pol.out_dim // 2, manifest["action_low"],
                                      manifest["action_high"], net=pol)
        agent.critics = SoftCritics(nets["q1"], nets["q2"], nets["v"], nets["v_target"],
                                    manifest["alpha"], manifest["gamma"], manifest["rho"])
        arrays = np.load(d / "optimizers.npz")
        agent.optimizers = {}
        for name, meta in manifest["optimizers"].items():
            n = len(nets[name].params)
            opt = Adam(nets[name].params)
            opt.load_state_dict({**meta, "m": [arrays[f"{name}.m.{i}"] for i in range(n)],
                                 "v": [arrays[f"{name}.v.{i}"] for i in range(n)]})
            agent.optimizers[name] = opt
        return agent


def config_hash(config_dict):
    blob = json.dumps(config_dict, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def soft_iteration_oracle(transitions, rewards, policy_table, alpha, gamma, tol=1e-12, max_sweeps=100_000):
    """Tabular soft policy evaluation.

    ``transitions[s, a, s']`` are probabilities, ``rewards[s, a]`` and
    ``policy_table[s, a]`` the fixed policy. Alternates
    ``Q = r + gamma P V`` and ``V = E_pi[Q - alpha log pi]`` until the
    contraction bound ``gamma / (1 - gamma) * |V_new - V|`` on the distance to
    the fixed point drops below ``tol``.
    """
    P = np.asarray(transitions, dtype=np.float64)
    R = np.asarray(rewards, dtype=np.float64)
    pi = np.asarray(policy_table, dtype=np.float64)
    with np.errstate(divide="ignore"):
        logpi = np.where(pi > 0, np.log(np.where(pi > 0, pi, 1.0)), 0.0)
    n_states = R.shape[0]
    V = np.zeros(n_states)
    Q = np.zeros_like(R)
    for _ in range(max_sweeps):
        Q = R + gamma * P @ V
        V_new = np.sum(pi * (Q - alpha * logpi), axis=1)
        delta = np.max(np.abs(V_new - V))
        V = V_new
        if delta * gamma < tol * (1.0 - gamma) or delta == 0.0:
            return R + gamma * P @ V, V
    raise RuntimeError(f"soft iteration did not converge within {max_sweeps} sweeps")
