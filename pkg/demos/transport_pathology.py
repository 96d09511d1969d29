"""Relaxed transport can send two units of one token to one expert.

A 6-token, 3-expert batch with k=2 and capacity 4. The transport
relaxation only fixes row and column sums, so its optimum puts mass 2 on
token 4 / expert 1. Entropic Sinkhorn drifts toward it; rounding and the
flow solver return binary plans.

Run with ``python3 demos/transport_pathology.py``.
"""

import numpy as np

from moeroute import assignment as asg
from moeroute.problem import RoutingProblem

a = np.array(
    [
        [0.6, 0.3, 0.5],
        [0.5, 0.2, 0.6],
        [0.7, 0.3, 0.4],
        [0.4, 0.3, 0.7],
        [0.1, 0.9, 0.1],
        [0.5, 0.4, 0.3],
    ]
)
p = RoutingProblem.uniform(a, 2)
np.set_printoptions(precision=3, suppress=True)

for eps in (0.1, 0.03, 0.01):
    tp = asg.sinkhorn(p, epsilon=eps)
    print(f"sinkhorn eps={eps}: token 4 -> expert 1 mass {tp.matrix[4, 1]:.3f}, "
          f"transport value {float((tp.matrix * a).sum()):.3f}")

rounded = asg.round_transport(asg.sinkhorn(p), p)
flow = asg.route_mcmf(p)
print("\nrounded plan\n", rounded, "\nscore", asg.score(rounded, a))
print("\nflow plan\n", flow, "\nscore", asg.score(flow, a))
