"""Continuous-control environments with deterministic dynamics.

All environments share one small interface: ``reset(rng) -> obs`` and
``step(action) -> Transition``. Actions are clipped to the action box before
the dynamics see them.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class EnvSpec:
    name: str
    obs_dim: int
    act_dim: int
    action_low: np.ndarray
    action_high: np.ndarray
    max_episode_steps: int

    def __post_init__(self):
        if self.obs_dim < 1 or self.act_dim < 1 or self.max_episode_steps < 1:
            raise ValueError("dimensions and step limit must be positive")
        if not np.all(np.asarray(self.action_low) < np.asarray(self.action_high)):
            raise ValueError("action_low must be < action_high elementwise")


@dataclass
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    done: bool
    # done because of the step limit rather than a true terminal state
    truncated: bool = False

    @property
    def terminal(self):
        return self.done and not self.truncated


@dataclass
class Episode:
    transitions: list = field(default_factory=list)

    @property
    def total_return(self):
        return float(sum(t.r for t in self.transitions))

    def __len__(self):
        return len(self.transitions)


class Env:
    spec: EnvSpec

    def __init__(self):
        self._t = 0
        self._done = True
        self.state = None

    def reset(self, rng):
        self._t = 0
        self._done = False
        self.state = self._initial_state(rng)
        return self._obs()

    def step(self, action):
        if self._done:
            raise RuntimeError(f"{self.spec.name}: step() on a finished episode; call reset()")
        a = np.clip(np.asarray(action, dtype=np.float64).reshape(self.spec.act_dim),
                    self.spec.action_low, self.spec.action_high)
        s = self._obs()
        r, terminated = self._advance(a)
        self._t += 1
        truncated = not terminated and self._t >= self.spec.max_episode_steps
        self._done = terminated or truncated
        return Transition(s, a, float(r), self._obs(), self._done, truncated)

    def _initial_state(self, rng):
        raise NotImplementedError

    def _advance(self, a):
        raise NotImplementedError

    def _obs(self):
        return np.array(self.state, dtype=np.float64)


class MountainCarContinuous(Env):
    """Underpowered car in a valley; +100 on reaching x >= 0.45, minus 0.1 a^2 per step."""

    min_position = -1.2
    max_position = 0.6
    max_speed = 0.07
    goal_position = 0.45
    goal_velocity = 0.0
    power = 0.0015

    def __init__(self, max_episode_steps=999):
        super().__init__()
        self.spec = EnvSpec("MountainCarContinuous", 2, 1, np.array([-1.0]), np.array([1.0]),
                            max_episode_steps)

    def _initial_state(self, rng):
        return np.array([rng.uniform(-0.6, -0.4), 0.0])

    def _advance(self, a):
        position, velocity = self.state
        force = a[0]
        velocity += force * self.power - 0.0025 * math.cos(3 * position)
        velocity = min(max(velocity, -self.max_speed), self.max_speed)
        position += velocity
        position = min(max(position, self.min_position), self.max_position)
        if position == self.min_position and velocity < 0:
            velocity = 0.0
        terminated = bool(position >= self.goal_position and velocity >= self.goal_velocity)
        reward = (100.0 if terminated else 0.0) - 0.1 * force ** 2
        self.state = np.array([position, velocity])
        return reward, terminated


def angle_normalize(x):
    return ((x + math.pi) % (2 * math.pi)) - math.pi


class Pendulum(Env):
    """Torque-limited swing-up; dense negative cost, upright at angle 0."""

    max_speed = 8.0
    max_torque = 2.0
    dt = 0.05
    g = 10.0
    m = 1.0
    length = 1.0

    def __init__(self, max_episode_steps=200):
        super().__init__()
        self.spec = EnvSpec("Pendulum", 3, 1, np.array([-self.max_torque]), np.array([self.max_torque]),
                            max_episode_steps)

    def _initial_state(self, rng):
        return np.array([rng.uniform(-math.pi, math.pi), rng.uniform(-1.0, 1.0)])

    def _advance(self, a):
        th, thdot = self.state
        u = a[0]
        cost = angle_normalize(th) ** 2 + 0.1 * thdot ** 2 + 0.001 * u ** 2
        newthdot = thdot + (3 * self.g / (2 * self.length) * math.sin(th)
                            + 3.0 / (self.m * self.length ** 2) * u) * self.dt
        newthdot = min(max(newthdot, -self.max_speed), self.max_speed)
        self.state = np.array([th + newthdot * self.dt, newthdot])
        return -cost, False

    def _obs(self):
        th, thdot = self.state
        return np.array([math.cos(th), math.sin(th), thdot])


class SparseReacher(Env):
    """Point mass on a plane with a sparse far goal and a small nearby reward trap.

    Reward per step is 1 inside the goal disc, ``distractor_reward`` inside the
    distractor disc, 0 elsewhere. Episodes only end at the step limit, so
    sitting in the distractor is a stable but poor policy.
    """

    goal = np.array([1.2, 1.2])
    goal_radius = 0.15
    distractor = np.array([-0.25, -0.25])
    distractor_radius = 0.15
    distractor_reward = 0.1
    speed = 0.05
    arena = 2.0

    def __init__(self, max_episode_steps=200):
        super().__init__()
        self.spec = EnvSpec("SparseReacher", 2, 2, -np.ones(2), np.ones(2), max_episode_steps)

    def _initial_state(self, rng):
        return np.zeros(2)

    def _advance(self, a):
        pos = np.clip(self.state + self.speed * a, -self.arena, self.arena)
        self.state = pos
        if np.linalg.norm(pos - self.goal) < self.goal_radius:
            return 1.0, False
        if np.linalg.norm(pos - self.distractor) < self.distractor_radius:
            return self.distractor_reward, False
        return 0.0, False


ENVIRONMENTS = {
    "MountainCarContinuous": MountainCarContinuous,
    "Pendulum": Pendulum,
    "SparseReacher": SparseReacher,
}


def make_env(name):
    try:
        return ENVIRONMENTS[name]()
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}") from None


def scripted_expert_mountaincar(observation):
    """Push in the direction of motion with half power."""
    return np.array([-0.5 if observation[1] < 0 else 0.5])


def scripted_expert_pendulum(observation):
    cos_th, sin_th, thdot = observation
    th = math.atan2(sin_th, cos_th)
    if cos_th > 0.85:
        return np.array([np.clip(-(10.0 * th + 2.0 * thdot), -2.0, 2.0)])
    # pump energy until the upright rest energy is reached
    energy = 0.5 * thdot ** 2 + 15.0 * cos_th
    if energy < 15.0:
        return np.array([2.0 if thdot >= 0 else -2.0])
    return np.array([0.0])


def scripted_expert_reacher(observation):
    step = (SparseReacher.goal - np.asarray(observation)) / SparseReacher.speed
    return np.clip(step, -1.0, 1.0)


SCRIPTED_EXPERTS = {
    "MountainCarContinuous": scripted_expert_mountaincar,
    "Pendulum": scripted_expert_pendulum,
    "SparseReacher": scripted_expert_reacher,
}


def rollout(env, policy, rng):
    """Run one episode with ``policy(obs) -> action``."""
    obs = env.reset(rng)
    episode = Episode()
    while True:
        t = env.step(policy(obs))
        episode.transitions.append(t)
        if t.done:
            return episode
        obs = t.s_next


def evaluate_policy(env, policy, episodes, rng):
    """Mean undiscounted return of ``policy`` over ``episodes`` rollouts."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    return float(np.mean([rollout(env, policy, rng).total_return for _ in range(episodes)]))


GOLDEN_FIELDS = ("step", "s", "a", "r", "s_next", "done")


def write_trajectory_csv(path, transitions):
    """Golden-trajectory layout; vector fields are space-separated ``repr`` floats."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(GOLDEN_FIELDS)
        for i, t in enumerate(transitions):
            w.writerow([i, " ".join(repr(float(x)) for x in t.s), " ".join(repr(float(x)) for x in t.a),
                        repr(t.r), " ".join(repr(float(x)) for x in t.s_next), int(t.done)])


def read_trajectory_csv(path):
    out = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            out.append(Transition(
                np.array([float(x) for x in row["s"].split()]),
                np.array([float(x) for x in row["a"].split()]),
                float(row["r"]),
                np.array([float(x) for x in row["s_next"].split()]),
                bool(int(row["done"])),
            ))
    return out
