"""Greedy top-k drops second choices; min-cost max-flow reroutes them.

Run with ``python3 demos/flow_vs_greedy.py``.
"""

import numpy as np

from moeroute import assignment as asg
from moeroute.harness.synthetic import SyntheticSpec, generate
from moeroute.metrics import drop_rate_by_rank, load_ratio

problem = generate(SyntheticSpec(256, 16, 2, 1.0, "peaked", 4.0, "softmax", 1.0, seed=0))
best = asg.score(asg.route_mcmf(problem), problem.affinities)

# drop r2 counts tokens whose second-ranked expert was not assigned,
# even when the slot went to another expert
print(f"{'router':<14}{'score':>9}{'ratio':>8}{'drop r1':>9}{'drop r2':>9}{'load':>7}")
for name in ("greedy", "iterative", "expert_choice", "sbase", "maxscore", "mcmf"):
    plan = asg.route(name, problem)
    s = asg.score(asg.restrict_to_feasible(plan, problem), problem.affinities)
    r1, r2 = drop_rate_by_rank(problem, plan)
    _, load = load_ratio(plan, problem.capacity)
    print(f"{name:<14}{s:9.3f}{s / best:8.4f}{r1:9.4f}{r2:9.4f}{load:7.3f}")

# the few tokens greedy drops are almost all second choices
plan = asg.route_greedy_topk(problem)
short = np.flatnonzero(plan.sum(axis=1) < 2)
print(f"\ngreedy leaves {short.size} of {problem.n} tokens with fewer than 2 experts")
