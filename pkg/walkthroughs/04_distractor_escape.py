#!/usr/bin/env python3
# SparseReacher: a small reward disc sits right next to the start, the real
# goal is far away. Random exploration finds the small one, and SAC settles
# there. Guidance walks the agent to the goal often enough that the critic
# learns it is worth the trip.

# %%
import os

import numpy as np

from drleg.envs import SparseReacher, rollout
from drleg.harness import TrainConfig, collect_expert_demos, train
from drleg.numerics import make_rng

STEPS = int(os.environ.get("STEPS", 20_000))
demos = collect_expert_demos("SparseReacher", pairs=1000, seed=0)
env = SparseReacher()
print(f"expert return {demos.r_demo:.0f}; best possible at the distractor "
      f"{env.distractor_reward * env.spec.max_episode_steps:.0f}")

# %%
runs = {}
for name, guided in [("sac", False), ("drleg", True)]:
    cfg = TrainConfig(name=name, env="SparseReacher", total_steps=STEPS, eval_every=5000, guidance=guided)
    runs[name] = train(cfg, demos, log=print)

# %% [markdown]
# Where does each final policy end up?

# %%
for name, (rec, agent) in runs.items():
    ep = rollout(env, lambda o: agent.policy.act(o), make_rng(0))
    end = ep.transitions[-1].s_next
    print(f"{name:6s} return {ep.total_return:6.1f}  final position {np.round(end, 2)}")
