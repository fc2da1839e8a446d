"""
Cart-pole swing-up with a trust-region controller
==================================================

One closed-loop episode: the pole starts hanging, the controller samples 40
force sequences per iteration from a shipped LCD set, runs three
trust-region updates per control step and applies the first force of the
best sequence. The same episode is then repeated with the MPPI rule.

Run with ``python demos/02_cartpole_swing_up.py`` (a few seconds).
"""

import math

import numpy as np

from trsmpc import MpcConfig, TrustRegionConfig, load_shipped, make_env, run_episode

params, ocp, stage_cost = make_env("cartpole")
lcd = load_shipped(40, ocp.sequence_dim)
print(f"horizon {ocp.horizon} steps of {ocp.dt} s, {params.steps} control steps, "
      f"force bound {params.force_bound} N")

# %%
# Trust region with the bench defaults: KL bound 2, entropy floor -50.
cfg = MpcConfig(n_samples=40, iterations=3, rule="tr", sampler="lcd", init_std=params.init_std,
                rule_config=TrustRegionConfig(epsilon=2.0, h_min=-50.0), seed=1)
states, controls, record, steps = run_episode(ocp, params.initial_state(), params.steps, cfg,
                                              stage_cost, lcd_set=lcd)

# %%
# The pole angle is measured from upright, so |theta| going from pi towards 0
# is the swing-up. Wrap it to [-pi, pi] before printing.
theta = np.abs((states[:, 2] + math.pi) % (2 * math.pi) - math.pi)
for k in range(0, params.steps + 1, 25):
    print(f"t={k * params.dt:4.1f} s  |theta|={theta[k]:5.2f} rad  x={states[k, 0]:6.2f} m")
upright = np.flatnonzero(theta < 0.2)
print(f"first within 0.2 rad of upright at step {upright[0] if upright.size else 'never'}")

# %%
# Per-iteration diagnostics come with every step.
info = steps[60].iterations
print("step 60: eta", [round(i.eta, 3) for i in info], " ESS", [round(i.ess, 1) for i in info])
print(f"trust region: cost {record.cum_cost:.1f}, smoothness {record.smoothness:.1f}, "
      f"{record.step_ms_mean:.1f} ms/step")

# %%
# The heuristic on the same seed and sample set.
cfg_mppi = MpcConfig(n_samples=40, iterations=3, rule="mppi", sampler="lcd",
                     init_std=params.init_std, seed=1)
_, _, rec_mppi, _ = run_episode(ocp, params.initial_state(), params.steps, cfg_mppi, stage_cost,
                                lcd_set=lcd)
print(f"mppi:         cost {rec_mppi.cum_cost:.1f}, smoothness {rec_mppi.smoothness:.1f}, "
      f"{rec_mppi.step_ms_mean:.1f} ms/step")
