#!/usr/bin/env python3
# Plain SAC vs SAC with demonstration guidance on continuous MountainCar.
# The only reward worth having is at the flag, so an unguided agent learns
# that standing still (return ~0) beats paying for throttle.
#
# STEPS = 50_000 reproduces the full comparison (~4 minutes per run on one
# core); the default is shorter so the script finishes in a few minutes.

# %%
import os

from drleg.harness import TrainConfig, collect_expert_demos, compare, export

STEPS = int(os.environ.get("STEPS", 20_000))
SEEDS = [0]
out = os.environ.get("DRLEG_OUTPUT_DIR", "runs/walkthrough")
os.makedirs(out, exist_ok=True)

demos = collect_expert_demos("MountainCarContinuous", pairs=1000, seed=0)
print(f"expert return {demos.r_demo:.1f}")

# %%
configs = [
    TrainConfig(name="sac", total_steps=STEPS, eval_every=5000, guidance=False),
    TrainConfig(name="drleg", total_steps=STEPS, eval_every=5000, guidance=True),
    TrainConfig(name="sac+bc", total_steps=STEPS, eval_every=5000, guidance=False, bc_pretrain_epochs=50),
]
comp = compare(configs, SEEDS, demos, log=print)

# %% [markdown]
# Guided fraction is the share of environment steps in which the guider
# chose the action since the previous evaluation.

# %%
for method in comp.methods:
    rec = comp.runs[(method, SEEDS[0])]
    print(method)
    for row in rec.rows:
        print(f"  step {row.step:6d}  R_pi {row.r_pi:8.2f}  guided {row.guided_fraction:.2f}")

export(comp, os.path.join(out, "mountaincar.csv"))
export(comp, os.path.join(out, "mountaincar.json"), fmt="json")
print("final:", {m: round(v["mean"], 2) for m, v in comp.final_table().items()})
