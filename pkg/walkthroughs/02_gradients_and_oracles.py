#!/usr/bin/env python3
# Why the hand-written backprop can be trusted: analytic gradients of the
# three SAC losses against central differences, then tabular soft policy
# evaluation against an exact linear solve. Takes a few seconds.

# %%
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
from oracles import (  # noqa: E402
    bellman_linear_solve, policy_gradient_error, q_gradient_error, soft_residuals, tabular_mdps, v_gradient_error,
)
from drleg.sac import soft_iteration_oracle  # noqa: E402

# %% [markdown]
# Each seed builds fresh random nets of varying depth and width. The policy
# check holds the reparameterization noise fixed across perturbed
# evaluations, otherwise finite differences would just measure noise.

# %%
for name, fn in [("Q", q_gradient_error), ("V", v_gradient_error), ("policy", policy_gradient_error)]:
    errs = np.array([fn(seed) for seed in range(10)])
    print(f"{name:7s} worst rel. error {errs.max():.2e}  median {np.median(errs):.2e}")

# %% [markdown]
# With alpha = 0 the soft equations reduce to ordinary policy evaluation,
# which has a closed form. With alpha > 0 we just check the residuals.

# %%
for i, (P, R, pi, alpha, gamma) in enumerate(tabular_mdps()):
    Q, V = soft_iteration_oracle(P, R, pi, alpha, gamma)
    rq, rv = soft_residuals(P, R, pi, alpha, gamma, Q, V)
    _, V0 = soft_iteration_oracle(P, R, pi, 0.0, gamma)
    _, V_ref = bellman_linear_solve(P, R, pi, gamma)
    print(f"MDP {i}: V = {np.round(V, 4)}  residuals {rq:.1e}/{rv:.1e}  alpha=0 gap {np.abs(V0 - V_ref).max():.1e}")
