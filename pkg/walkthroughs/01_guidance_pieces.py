#!/usr/bin/env python3
# A tour of the guidance machinery on MountainCar demonstrations:
# which states count as "guidable", what action the guider proposes,
# and when the gate actually hands control to the guider.
# Runs in a few seconds.

# %%
import numpy as np

from drleg.guidance import FunctionalDiscriminator, FunctionalGuider, GuidanceGate, fit_gmm
from drleg.harness import collect_expert_demos
from drleg.numerics import make_rng

demos = collect_expert_demos("MountainCarContinuous", pairs=1000, seed=0)
print(f"{len(demos)} pairs over {len(demos.episode_lengths)} episodes, R_demo = {demos.r_demo:.2f}")
print("state std per dim:", demos.states.std(axis=0))

# %% [markdown]
# Position spans about one unit while velocity spans about 0.1, so raw
# Euclidean distance would ignore velocity almost entirely. Both functional
# pieces divide by the demo std first.

# %%
disc = FunctionalDiscriminator(demos.states, threshold=0.2)
guider = FunctionalGuider(demos.states, demos.actions, [-1.0], [1.0], sigma=0.0)

queries = {
    "start of an expert run": np.array([-0.5, 0.0]),
    "rolling back left": np.array([-0.9, -0.03]),
    "near the flag": np.array([0.4, 0.04]),
    "impossible: fast, wrong way at the top": np.array([0.5, -0.07]),
}
for label, s in queries.items():
    d = disc.min_distance(s)
    verdict = "guidable" if disc.discriminate(s) else "outside support"
    print(f"{label:40s} dist {d:6.3f} -> {verdict:16s} guider action {guider.guide(s)[0]:+.2f}")

# %% [markdown]
# The guider copies the nearest expert action. With the default noise it
# jitters around that action, which keeps the replay data from collapsing
# onto a single action per state.

# %%
noisy = FunctionalGuider(demos.states, demos.actions, [-1.0], [1.0])
rng = make_rng(1)
samples = np.array([noisy.guide(np.array([-0.9, -0.03]), rng)[0] for _ in range(1000)])
print(f"noisy guider: mean {samples.mean():+.3f}, std {samples.std():.3f}, sigma {noisy.sigma[0]:.3f}")

# %% [markdown]
# The density-based discriminator is the alternative for large demo sets.
# Its threshold is set so that 95% of demo states are accepted.

# %%
gmm = fit_gmm(demos.states, n_components=8, rng=make_rng(2))
print("EM iterations:", len(gmm.log_likelihood_trace), " final mean log-lik:", round(gmm.log_likelihood_trace[-1], 3))
for label, s in queries.items():
    print(f"{label:40s} density {gmm.density(s):10.4g} -> {gmm.discriminate(s)}")

# %% [markdown]
# The gate only fires while the policy's last evaluated return trails the
# demonstrations. Once the agent matches the expert it explores on its own.

# %%
gate = GuidanceGate(disc, guider, demos.r_demo)
s = queries["rolling back left"]
for r_pi in (0.0, 50.0, demos.r_demo + 1):
    gate.r_pi = r_pi
    print(f"R_pi = {r_pi:7.2f}: {gate.check(s)}")
