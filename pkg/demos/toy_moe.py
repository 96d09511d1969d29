"""A toy layer: gates, routing, combination and a gradient check.

Run with ``python3 demos/toy_moe.py``.
"""

import numpy as np

from moeroute.gate_ops import TemperatureSchedule
from moeroute.moe_layer import MoEConfig, analytic_grad_Wg, forward, loss, numeric_grad_Wg

rng = np.random.default_rng(0)
d, e, n = 4, 4, 12
w_g = rng.normal(size=(d, e))
experts = rng.normal(size=(e, d, d)) / np.sqrt(d)
x = rng.normal(size=(n, d))

for router in ("greedy", "maxscore", "mcmf"):
    cfg = MoEConfig(d=d, e=e, k=2, operator="soft_topk", router=router,
                    schedule=TemperatureSchedule(t0=2.0, t_final=0.5, decay_steps=100))
    out = forward(cfg, w_g, experts, x, step=50)
    print(f"{router:<9} loss {loss(out.outputs):.4f}  slots served {int(out.plan.sum())}/{2 * n}  "
          f"aux {out.report.aux_loss:.2e}")

# the plan is held fixed while W_g is perturbed
num = numeric_grad_Wg(cfg, w_g, experts, x, step=50)
ana = analytic_grad_Wg(cfg, w_g, experts, x, step=50)
print(f"\nmax |numeric - analytic| gradient difference: {np.abs(num - ana).max():.2e}")
