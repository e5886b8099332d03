"""Training loop with demonstration-guided exploration, multi-seed comparison and export."""

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .envs import ENVIRONMENTS, SCRIPTED_EXPERTS, evaluate_policy, make_env
from .guidance import build_gate
from .numerics import Adam, make_rng, split_streams
from .replay import DemoSet, ReplayBuffer, collect_demos
from .sac import SacAgent, config_hash, sample_action

STREAMS = ("init", "env", "explore", "guide", "batch", "update", "pretrain")


class ConfigError(ValueError):
    pass


class TrainingAborted(RuntimeError):
    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record


@dataclass
class TrainConfig:
    name: str = "sac"
    env: str = "MountainCarContinuous"
    total_steps: int = 100_000
    seed: int = 0
    # `updates_per_round` updates every `update_every` environment steps
    update_every: int = 50
    updates_per_round: int = 50
    update_after: int = 1000
    warmup_steps: int = 1000
    eval_every: int = 5000
    eval_episodes: int = 10
    batch_size: int = 256
    buffer_capacity: int = 1_000_000
    hidden: tuple = (64, 64)
    lr: float = 3e-4
    alpha: float = 0.2
    gamma: float = 0.99
    rho: float = 0.995
    sgd: bool = False
    # guidance
    guidance: bool = False
    demo_path: str = None
    discriminator: str = "functional"
    guider: str = "functional"
    distance_threshold: float = 0.2
    guider_sigma: float = None
    gmm_components: int = 8
    bc_pretrain_epochs: int = 0
    bc_pretrain_lr: float = 1e-3

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        for f in ("total_steps", "update_every", "updates_per_round", "eval_every", "eval_episodes",
                  "batch_size", "buffer_capacity"):
            v = getattr(self, f)
            if not isinstance(v, (int, np.integer)) or v < (0 if f == "total_steps" else 1):
                raise ConfigError(f"{f} must be a positive integer, got {v!r}")
        if self.env not in ENVIRONMENTS:
            raise ConfigError(f"unknown env {self.env!r}; choose from {sorted(ENVIRONMENTS)}")
        if self.discriminator not in ("functional", "gmm"):
            raise ConfigError(f"unknown discriminator {self.discriminator!r}")
        if self.guider not in ("functional", "bc"):
            raise ConfigError(f"unknown guider {self.guider!r}")

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @property
    def hash(self):
        return config_hash(self.to_dict())


@dataclass
class EvalRow:
    step: int
    r_pi: float
    guided_fraction: float
    loss_q: float
    loss_v: float
    loss_pi: float
    eval_seed: int


@dataclass
class RunRecord:
    config: dict
    config_hash: str
    rows: list = field(default_factory=list)
    wall_clock: float = 0.0
    aborted: bool = False

    @property
    def steps(self):
        return np.array([r.step for r in self.rows])

    @property
    def returns(self):
        return np.array([r.r_pi for r in self.rows])

    @property
    def final_return(self):
        return self.rows[-1].r_pi

    def rows_equal(self, other):
        """Bitwise comparison of the evaluation rows (NaNs compare equal)."""
        a = np.array([astuple_row(r) for r in self.rows], dtype=np.float64)
        b = np.array([astuple_row(r) for r in other.rows], dtype=np.float64)
        return a.shape == b.shape and a.tobytes() == b.tobytes()

    def to_dict(self):
        return {"config": self.config, "config_hash": self.config_hash, "wall_clock": self.wall_clock,
                "aborted": self.aborted, "rows": [asdict(r) for r in self.rows]}

    @classmethod
    def from_dict(cls, d):
        return cls(d["config"], d["config_hash"], [EvalRow(**r) for r in d["rows"]],
                   d["wall_clock"], d.get("aborted", False))


def astuple_row(r):
    return (r.step, r.r_pi, r.guided_fraction, r.loss_q, r.loss_v, r.loss_pi, r.eval_seed)


def eval_seed(master_seed, index):
    return int(np.random.SeedSequence(int(master_seed), spawn_key=(len(STREAMS) + 1, index)).generate_state(1)[0])


def evaluate_agent(env, policy, episodes, seed):
    """Deterministic-action return averaged over ``episodes``; reproducible from ``seed``."""
    return evaluate_policy(env, lambda o: policy.act(o, deterministic=True), episodes, make_rng(seed))


def load_demos_for(config, demos=None):
    if demos is not None:
        return demos
    needs = config.guidance or config.bc_pretrain_epochs > 0 or config.demo_path
    if not needs:
        return None
    if not config.demo_path:
        raise ConfigError("guidance/pretraining requested but no demo_path given")
    path = Path(config.demo_path)
    if not path.is_file():
        raise ConfigError(f"demo file {path} does not exist")
    return DemoSet.load(path)


def bc_pretrain(policy, demos, epochs, lr=1e-3, rng=None, batch_size=64):
    """Behavior-clone the policy's mean action onto demonstration actions.

    Minimizes ``mean((center + half * tanh(mu(s)) - a)^2)``; the log-std head
    receives no gradient. Returns the per-epoch loss history.
    """
    if len(demos) == 0:
        raise ValueError("cannot pretrain on an empty demonstration set")
    history = []
    if epochs <= 0:
        return history
    rng = np.random.default_rng(0) if rng is None else rng
    opt = Adam(policy.net.params, lr=lr)
    s, a = demos.states, demos.actions
    n = len(s)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            mu, _, _ = policy.heads(s[idx])
            th = np.tanh(mu)
            resid = policy.center + policy.half * th - a[idx]
            g_mu = 2.0 * resid * policy.half * (1 - th ** 2) / resid.size
            grads, _ = policy.net.backward(np.concatenate([g_mu, np.zeros_like(g_mu)], axis=1))
            opt.step(policy.net.params, grads)
        mu, _, _ = policy.heads(s, cache=False)
        loss = float(np.mean((policy.squash(mu) - a) ** 2))
        if not np.isfinite(loss):
            raise FloatingPointError("pretraining loss became non-finite")
        history.append(loss)
    return history


def train(config, demos=None, out_dir=None, save_checkpoints=False, log=None):
    """Run the guided SAC loop described by ``config``.

    Returns ``(record, agent)``. With ``out_dir`` the final checkpoint bundle
    and ``record.json`` are written there; ``save_checkpoints`` additionally
    stores one bundle per evaluation under ``out_dir/step_<n>``.
    """
    demos = load_demos_for(config, demos)
    if demos is not None and demos.env_name != config.env:
        raise ConfigError(f"demonstrations were recorded on {demos.env_name}, config trains on {config.env}")
    env = make_env(config.env)
    eval_env = make_env(config.env)
    spec = env.spec
    rngs = split_streams(config.seed, STREAMS)
    agent = SacAgent(spec.obs_dim, spec.act_dim, spec.action_low, spec.action_high, config.hidden,
                     config.lr, config.alpha, config.gamma, config.rho, config.sgd, rngs["init"])
    if config.bc_pretrain_epochs > 0:
        bc_pretrain(agent.policy, demos, config.bc_pretrain_epochs, config.bc_pretrain_lr, rngs["pretrain"])
    gate = None
    if demos is not None:
        gate = build_gate(demos, spec.action_low, spec.action_high, config.discriminator, config.guider,
                          config.distance_threshold, config.guider_sigma, config.gmm_components,
                          rng=rngs["pretrain"], enabled=config.guidance)
    buffer = ReplayBuffer(spec.obs_dim, spec.act_dim, config.buffer_capacity)
    record = RunRecord(config.to_dict(), config.hash)
    out = Path(out_dir) if out_dir else None
    t0 = time.perf_counter()

    def evaluate(step, n_guided, n_steps, losses):
        idx = len(record.rows)
        seed = eval_seed(config.seed, idx)
        r_pi = evaluate_agent(eval_env, agent.policy, config.eval_episodes, seed)
        means = np.mean(losses, axis=0) if losses else (math.nan,) * 3
        row = EvalRow(step, r_pi, n_guided / n_steps if n_steps else 0.0,
                      float(means[0]), float(means[1]), float(means[2]), seed)
        record.rows.append(row)
        if gate is not None:
            gate.r_pi = r_pi
        if out is not None and save_checkpoints:
            agent.save(out / f"step_{step}", config.hash)
        if log:
            log(f"[{config.name} seed={config.seed}] step {step:>7d}  R_pi {r_pi:9.3f}  "
                f"guided {row.guided_fraction:.3f}  J_Q {row.loss_q:.4g}  J_pi {row.loss_pi:.4g}")

    evaluate(0, 0, 0, [])
    obs = env.reset(rngs["env"])
    n_guided = n_since = 0
    losses = []
    try:
        for step in range(1, config.total_steps + 1):
            fires = gate is not None and gate.check(obs)[0]
            if fires:
                action = gate.guider.guide(obs, rngs["guide"])
                n_guided += 1
            elif step <= config.warmup_steps:
                action = rngs["explore"].uniform(spec.action_low, spec.action_high)
            else:
                action, _ = sample_action(agent.policy, obs, rngs["explore"])
            t = env.step(action)
            buffer.push(t)
            n_since += 1
            obs = env.reset(rngs["env"]) if t.done else t.s_next

            if step >= config.update_after and step % config.update_every == 0:
                for _ in range(config.updates_per_round):
                    batch = buffer.sample(config.batch_size, rngs["batch"])
                    losses.append(agent.update(batch, rngs["update"]))
                agent.check_finite()

            if step % config.eval_every == 0 or step == config.total_steps:
                evaluate(step, n_guided, n_since, losses)
                n_guided = n_since = 0
                losses = []
    except FloatingPointError as e:
        record.aborted = True
        record.wall_clock = time.perf_counter() - t0
        if out is not None:
            agent.save(out / "abort", config.hash)
            write_json(record, out / "record.json")
        raise TrainingAborted(f"{config.name} seed {config.seed}: {e}", record) from e
    record.wall_clock = time.perf_counter() - t0
    if out is not None:
        agent.save(out / "checkpoint", config.hash)
        write_json(record, out / "record.json")
    return record, agent


def collect_expert_demos(env_name, pairs=1000, seed=0):
    """Demonstrations from the built-in scripted expert for ``env_name``."""
    env = make_env(env_name)
    return collect_demos(env, SCRIPTED_EXPERTS[env_name], pairs, make_rng(seed, 99))


# ---------------------------------------------------------------- comparison


@dataclass
class Comparison:
    methods: list
    runs: dict
    failed: list = field(default_factory=list)

    def curve(self, method):
        """``(steps, mean, min, max)`` of R_pi across seeds at each evaluation step."""
        recs = [r for (m, _), r in sorted(self.runs.items(), key=lambda kv: kv[0][1]) if m == method]
        if not recs:
            raise KeyError(method)
        n = min(len(r.rows) for r in recs)
        steps = recs[0].steps[:n]
        vals = np.array([r.returns[:n] for r in recs])
        return steps, vals.mean(axis=0), vals.min(axis=0), vals.max(axis=0)

    def final_table(self):
        table = {}
        for m in self.methods:
            finals = [r.final_return for (mm, _), r in self.runs.items() if mm == m]
            table[m] = {"mean": float(np.mean(finals)), "min": float(np.min(finals)),
                        "max": float(np.max(finals)), "finals": finals}
        return table

    @property
    def partial(self):
        return bool(self.failed)


def _run_one(args):
    config, demos = args
    try:
        return train(config, demos)[0], None
    except TrainingAborted as e:
        return e.record, str(e)


def compare(configs, seeds, demos=None, n_jobs=1, log=None):
    """Train every config under every seed; methods are labeled by ``config.name``.

    Repeated names get a ``#k`` suffix so each list entry is its own column.
    """
    if not configs or not seeds:
        raise ConfigError("compare needs at least one config and one seed")
    labels, seen = [], {}
    for c in configs:
        seen[c.name] = seen.get(c.name, 0) + 1
        labels.append(c.name if seen[c.name] == 1 else f"{c.name}#{seen[c.name]}")
    jobs = [((label, seed), (replace(c, seed=seed), demos)) for label, c in zip(labels, configs) for seed in seeds]
    if n_jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(n_jobs) as pool:
            results = list(pool.map(_run_one, [j for _, j in jobs]))
    else:
        results = []
        for key, job in jobs:
            results.append(_run_one(job))
            if log:
                rec = results[-1][0]
                log(f"{key[0]} seed {key[1]}: final R_pi {rec.final_return:.3f}")
    comp = Comparison(labels, {})
    for (key, _), (rec, err) in zip(jobs, results):
        comp.runs[key] = rec
        if err:
            comp.failed.append((key, err))
    return comp


# ---------------------------------------------------------------- export


def curves_of(obj):
    """Normalize a RunRecord or Comparison to ``{method: (steps, mean, min, max)}``."""
    if isinstance(obj, RunRecord):
        r = obj.returns
        return {obj.config.get("name", "run"): (obj.steps, r, r, r)}
    return {m: obj.curve(m) for m in obj.methods}


def write_csv(obj, path):
    curves = curves_of(obj)
    if not curves or any(len(c[0]) == 0 for c in curves.values()):
        raise ValueError("nothing to export")
    methods = list(curves)
    steps = curves[methods[0]][0]
    n = min(len(c[0]) for c in curves.values())
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step"] + [f"{m}_{k}" for m in methods for k in ("mean", "min", "max")])
        for i in range(n):
            row = [int(steps[i])]
            for m in methods:
                row += [repr(float(curves[m][j][i])) for j in (1, 2, 3)]
            w.writerow(row)


def write_json(obj, path):
    if isinstance(obj, RunRecord):
        payload = {"kind": "run", **obj.to_dict()}
    else:
        payload = {"kind": "comparison", "methods": obj.methods, "failed": [list(map(str, f)) for f in obj.failed],
                   "final": obj.final_table(),
                   "runs": [{"method": m, "seed": s, **r.to_dict()} for (m, s), r in obj.runs.items()]}
    Path(path).write_text(json.dumps(payload, indent=1, allow_nan=True))


def read_json(path):
    d = json.loads(Path(path).read_text())
    if d.get("kind") == "comparison":
        runs = {(r["method"], r["seed"]): RunRecord.from_dict(r) for r in d["runs"]}
        return Comparison(d["methods"], runs, [tuple(f) for f in d["failed"]])
    return RunRecord.from_dict(d)


def export(obj, path, fmt="csv"):
    if fmt == "csv":
        write_csv(obj, path)
    elif fmt == "json":
        write_json(obj, path)
    else:
        raise ValueError(f"unknown export format {fmt!r}")
    return Path(path)
