"""Compare the six gating operators on one logit vector.

Run with ``python3 demos/gate_operators.py``.
"""

import numpy as np

from moeroute import gate_ops

logits = np.array([2.0, 1.2, 1.0, -0.5, -1.0])
print("logits        ", logits)
for op in gate_ops.OPERATORS:
    for k in (1, 2):
        g = gate_ops.apply(op, logits, k, t=0.5)
        print(f"{op:<10} k={k}  ", np.round(g, 4), " sum", round(float(g.sum()), 4))

# soft_topk anneals: off-top-k mass shrinks as the temperature falls
sched = gate_ops.TemperatureSchedule(t0=4.0, t_final=0.0, decay_steps=4)
for step in range(5):
    t = gate_ops.temperature_at(sched, step)
    g = gate_ops.soft_topk(logits, 2, t)
    print(f"step {step}  t={t:.1f}  off-top-2 mass {g[2:].sum():.4f}")
