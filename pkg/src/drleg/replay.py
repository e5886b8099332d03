"""Replay buffer and demonstration set, with a small binary file format.

File layout (both kinds)::

    8 bytes   magic (b"DRLEGDEM" or b"DRLEGBUF")
    4 bytes   format version, little-endian uint32
    4 bytes   header length n, little-endian uint32
    n bytes   UTF-8 JSON header
    rest      flat little-endian float64 records
"""

import csv
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .envs import Transition

FORMAT_VERSION = 1
DEMO_MAGIC = b"DRLEGDEM"
BUFFER_MAGIC = b"DRLEGBUF"
_PREFIX = struct.Struct("<8sII")


class FileFormatError(ValueError):
    pass


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    # 1.0 for true terminal states only; step-limit truncation stays 0
    terminal: np.ndarray

    def __len__(self):
        return len(self.r)


class ReplayBuffer:
    """FIFO ring buffer of transitions stored column-wise."""

    def __init__(self, obs_dim, act_dim, capacity=1_000_000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.obs_dim, self.act_dim, self.capacity = obs_dim, act_dim, capacity
        self.s = np.zeros((capacity, obs_dim))
        self.a = np.zeros((capacity, act_dim))
        self.r = np.zeros(capacity)
        self.s_next = np.zeros((capacity, obs_dim))
        self.terminal = np.zeros(capacity)
        self.size = 0
        self._next = 0

    def __len__(self):
        return self.size

    def push(self, t):
        s, a, s_next = np.asarray(t.s), np.asarray(t.a), np.asarray(t.s_next)
        if s.shape != (self.obs_dim,) or s_next.shape != (self.obs_dim,) or a.shape != (self.act_dim,):
            raise ValueError(f"transition shapes {s.shape}/{a.shape}/{s_next.shape} do not match "
                             f"buffer ({self.obs_dim}, {self.act_dim})")
        i = self._next
        self.s[i], self.a[i], self.r[i], self.s_next[i] = s, a, t.r, s_next
        self.terminal[i] = float(t.done and not getattr(t, "truncated", False))
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def _ordered_indices(self):
        """Storage indices from oldest to newest."""
        start = (self._next - self.size) % self.capacity
        return (start + np.arange(self.size)) % self.capacity

    def contents(self):
        """Stored transitions, oldest first."""
        return [Transition(self.s[i].copy(), self.a[i].copy(), float(self.r[i]), self.s_next[i].copy(),
                           bool(self.terminal[i])) for i in self._ordered_indices()]

    def sample(self, n, rng):
        """``n`` uniform draws with replacement."""
        if self.size == 0:
            raise RuntimeError("cannot sample from an empty buffer")
        idx = rng.integers(0, self.size, size=n)
        return Batch(self.s[idx], self.a[idx], self.r[idx], self.s_next[idx], self.terminal[idx])

    def save(self, path):
        idx = self._ordered_indices()
        records = np.concatenate([self.s[idx], self.a[idx], self.r[idx, None], self.s_next[idx],
                                  self.terminal[idx, None]], axis=1)
        header = {"obs_dim": self.obs_dim, "act_dim": self.act_dim, "capacity": self.capacity,
                  "count": int(self.size)}
        _write(path, BUFFER_MAGIC, header, records)

    @classmethod
    def load(cls, path):
        header, flat, offset = _read(path, BUFFER_MAGIC)
        obs_dim, act_dim, count = header["obs_dim"], header["act_dim"], header["count"]
        width = 2 * obs_dim + act_dim + 2
        records = _records(flat, offset, count, width)
        buf = cls(obs_dim, act_dim, header["capacity"])
        o, a = obs_dim, act_dim
        buf.s[:count] = records[:, :o]
        buf.a[:count] = records[:, o:o + a]
        buf.r[:count] = records[:, o + a]
        buf.s_next[:count] = records[:, o + a + 1:2 * o + a + 1]
        buf.terminal[:count] = records[:, -1]
        buf.size = count
        buf._next = count % buf.capacity
        return buf


@dataclass
class DemoSet:
    """Expert state-action pairs grouped by source episode.

    ``episode_lengths`` partitions the pairs in order. ``episode_returns``
    holds one undiscounted return per *completed* source episode; a final
    episode cut off by the pair budget has no entry.
    """

    env_name: str
    states: np.ndarray
    actions: np.ndarray
    episode_lengths: list = field(default_factory=list)
    episode_returns: list = field(default_factory=list)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        if self.states.ndim != 2 or self.actions.ndim != 2 or len(self.states) != len(self.actions):
            raise ValueError("states/actions must be 2-D arrays with equal row counts")
        if sum(self.episode_lengths) != len(self.states):
            raise ValueError("episode lengths do not partition the pairs")

    def __len__(self):
        return len(self.states)

    @property
    def obs_dim(self):
        return self.states.shape[1]

    @property
    def act_dim(self):
        return self.actions.shape[1]

    @property
    def r_demo(self):
        """Mean return over completed source episodes; NaN when there are none."""
        if not self.episode_returns:
            return math.nan
        return float(np.mean(self.episode_returns))

    @property
    def pairs(self):
        return list(zip(self.states, self.actions))

    def save(self, path):
        header = {"env_name": self.env_name, "obs_dim": self.obs_dim, "act_dim": self.act_dim,
                  "count": len(self), "episode_lengths": [int(n) for n in self.episode_lengths],
                  "episode_returns": [float(r) for r in self.episode_returns],
                  "r_demo": None if math.isnan(self.r_demo) else self.r_demo}
        _write(path, DEMO_MAGIC, header, np.concatenate([self.states, self.actions], axis=1))

    @classmethod
    def load(cls, path):
        header, flat, offset = _read(path, DEMO_MAGIC)
        o, a, n = header["obs_dim"], header["act_dim"], header["count"]
        records = _records(flat, offset, n, o + a)
        demos = cls(header["env_name"], records[:, :o].reshape(n, o), records[:, o:].reshape(n, a),
                    list(header["episode_lengths"]), list(header["episode_returns"]))
        stored = header["r_demo"]
        recomputed = demos.r_demo
        if (stored is None) != math.isnan(recomputed) or (stored is not None and abs(stored - recomputed) > 1e-12):
            raise FileFormatError(f"{path}: stored r_demo {stored} disagrees with recomputed {recomputed}")
        return demos

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["episode"] + [f"s{i}" for i in range(self.obs_dim)] + [f"a{i}" for i in range(self.act_dim)])
            ep = np.repeat(np.arange(len(self.episode_lengths)), self.episode_lengths)
            for e, s, a in zip(ep, self.states, self.actions):
                w.writerow([int(e)] + [repr(float(x)) for x in s] + [repr(float(x)) for x in a])


def collect_demos(env, expert_policy, pair_budget, rng):
    """Roll out ``expert_policy`` until ``pair_budget`` pairs are recorded.

    The last episode is cut at the budget and does not count toward
    ``r_demo``. If no episode has completed by then, the current one is run to
    its end (without recording more pairs) so that ``r_demo`` is defined.
    """
    if pair_budget < 1:
        raise ValueError("pair_budget must be >= 1")
    step_limit = max(10 * pair_budget, env.spec.max_episode_steps)
    states, actions, lengths, returns = [], [], [], []
    steps = 0
    while True:
        obs = env.reset(rng)
        ep_len, ep_ret = 0, 0.0
        while True:
            if steps >= step_limit:
                raise RuntimeError(f"expert did not complete an episode within {step_limit} steps")
            t = env.step(np.asarray(expert_policy(obs), dtype=np.float64))
            steps += 1
            ep_ret += t.r
            if len(states) < pair_budget:
                states.append(t.s)
                actions.append(t.a)
                ep_len += 1
            if t.done or (len(states) >= pair_budget and returns):
                break
            obs = t.s_next
        if ep_len:
            lengths.append(ep_len)
        if t.done:
            returns.append(ep_ret)
        if len(states) >= pair_budget and returns:
            break
    return DemoSet(env.spec.name, np.array(states), np.array(actions), lengths, returns)


def _write(path, magic, header, records):
    head = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_PREFIX.pack(magic, FORMAT_VERSION, len(head)))
        f.write(head)
        f.write(np.ascontiguousarray(records, dtype="<f8").tobytes())


def _read(path, magic):
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < _PREFIX.size:
        raise FileFormatError(f"{path}: truncated prefix at byte offset {len(data)}")
    got_magic, version, head_len = _PREFIX.unpack_from(data)
    if got_magic != magic:
        raise FileFormatError(f"{path}: bad magic {got_magic!r} at byte offset 0")
    if version != FORMAT_VERSION:
        raise FileFormatError(f"{path}: unsupported version {version}")
    end = _PREFIX.size + head_len
    if len(data) < end:
        raise FileFormatError(f"{path}: truncated header at byte offset {len(data)}")
    try:
        header = json.loads(data[_PREFIX.size:end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FileFormatError(f"{path}: malformed header at byte offset {_PREFIX.size}: {e}") from None
    return header, data[end:], end


def _records(payload, offset, count, width):
    expected = count * width * 8
    if len(payload) != expected:
        rec_bytes = width * 8
        bad = offset + (len(payload) // rec_bytes) * rec_bytes if len(payload) < expected else offset + expected
        raise FileFormatError(f"record data has {len(payload)} bytes, header implies {expected}; "
                              f"first bad record at byte offset {bad}")
    return np.frombuffer(payload, dtype="<f8").reshape(count, width).astype(np.float64)
