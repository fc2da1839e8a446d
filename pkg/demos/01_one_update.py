"""
One proposal update, three ways
===============================

A two-dimensional Gaussian proposal, a quadratic cost with its minimum away
from the proposal mean, and one batch of samples. The same batch is handed
to the trust-region rule, the MPPI rule and CEM so the resulting proposals
can be compared side by side.

Run with ``python demos/01_one_update.py``.
"""

import numpy as np

from trsmpc import (CemConfig, GaussianProposal, MppiConfig, SampleBatch, TrustRegionConfig,
                    cem_update, gaussian_entropy, gaussian_kl, mppi_update, tr_update)

rng = np.random.default_rng(0)

# %%
# The proposal starts at the origin with unit variances; the cost pulls
# towards (2, -1).
old = GaussianProposal.from_cov(np.zeros(2), np.eye(2))
samples = rng.standard_normal((200, 2))
target = np.array([2.0, -1.0])
costs = np.sum((samples - target) ** 2, axis=1)

# %%
# The trust-region step picks its temperature by solving the dual problem,
# so the new proposal sits at a KL distance of about epsilon from the old one
# whatever the cost scale is.
for eps in (0.1, 0.5, 2.0):
    new, dual = tr_update(old, SampleBatch(samples, costs=costs), TrustRegionConfig(epsilon=eps))
    print(f"trust region eps={eps:<4} eta={dual.eta:8.4f}  mean={np.round(new.mean, 3)}  "
          f"KL={dual.kl:.3f}  ESS={dual.ess:6.1f}")

# %%
# Scaling the costs by 100 changes nothing for the trust region (eta scales
# with them), while a fixed MPPI temperature would turn into an argmin.
new, dual = tr_update(old, SampleBatch(samples, costs=100 * costs), TrustRegionConfig(epsilon=0.5))
print(f"costs x100       eta={dual.eta:8.4f}  mean={np.round(new.mean, 3)}  KL={dual.kl:.3f}")

# %%
# The heuristics for comparison. MPPI adapts its temperature to the cost
# spread; CEM keeps the best 10% of the batch. Both blend with the old
# proposal through the momentum term.
p_mppi, w, lam = mppi_update(samples, costs, MppiConfig(), previous=old)
p_cem = cem_update(samples, costs, CemConfig(), previous=old)
for name, p in (("mppi", p_mppi), ("cem", p_cem)):
    print(f"{name:<16} mean={np.round(p.mean, 3)}  KL={gaussian_kl(p, old):.3f}  "
          f"entropy={gaussian_entropy(p):.3f}")
print(f"mppi temperature {lam:.4f}")

# %%
# An entropy floor keeps the update from shrinking the proposal too far.
free, d_free = tr_update(old, SampleBatch(samples, costs=costs), TrustRegionConfig(epsilon=2.0))
floor = d_free.entropy + 0.5
held, d_held = tr_update(old, SampleBatch(samples, costs=costs),
                         TrustRegionConfig(epsilon=2.0, h_min=floor))
print(f"entropy without floor {d_free.entropy:.3f}, with floor {floor:.3f}: {d_held.entropy:.3f} "
      f"(alpha={d_held.alpha:.3f})")
