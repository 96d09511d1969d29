"""Exhaustive reference solver for tiny routing problems.

Tokens are decided one at a time. Each token may take any subset of at most
``k_i`` experts that still have room, and the best completion is memoized on
``(token, remaining capacities)``. Plans are compared first by the number of
slots served and then by score, the same priority as a min-cost max-flow.
Nothing here shares code with the flow solver.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations

import numpy as np

from .errors import RoutingError
from .problem import RoutingProblem

__all__ = ["MAX_SEARCH", "OracleResult", "brute_force", "search_size"]

# largest n * e * k the oracle accepts; 6 tokens x 4 experts x 2 slots is 48
MAX_SEARCH = 64


def search_size(problem: RoutingProblem) -> int:
    return problem.n * problem.e * max(problem.k, 1)


@dataclass
class OracleResult:
    served: int
    score: float
    plan: np.ndarray


def brute_force(problem: RoutingProblem, limit: int = MAX_SEARCH) -> OracleResult:
    """Best plan by exhaustive search.

    Raises
    ------
    RoutingError
        If ``n * e * k`` exceeds ``limit``.
    """
    size = search_size(problem)
    if size > limit:
        raise RoutingError(f"search space n*e*k = {size} exceeds the oracle bound {limit}")
    a = problem.affinities.tolist()
    demand = problem.demand.tolist()
    n, e = problem.n, problem.e

    @lru_cache(maxsize=None)
    def best(i: int, room: tuple):
        if i == n:
            return 0, 0.0, ()
        top = (-1, 0.0, ())
        open_experts = [j for j in range(e) if room[j] > 0]
        for size in range(min(demand[i], len(open_experts)) + 1):
            for chosen in combinations(open_experts, size):
                left = list(room)
                for j in chosen:
                    left[j] -= 1
                served, score, rest = best(i + 1, tuple(left))
                served += size
                score += sum(a[i][j] for j in chosen)
                if served > top[0] or (served == top[0] and score > top[1]):
                    top = (served, score, (chosen,) + rest)
        return top

    served, score, picks = best(0, tuple(problem.capacity.tolist()))
    plan = np.zeros((n, e), dtype=np.int64)
    for i, chosen in enumerate(picks):
        plan[i, list(chosen)] = 1
    return OracleResult(served, score, plan)
