"""Token-to-expert routers.

Every router takes a :class:`RoutingProblem` and returns an ``(n, e)``
int64 matrix of zeros and ones, the assignment plan. Routers never modify
the problem.

Capacity-constrained baselines (GShard-style greedy top-k, iterative
rerouting, expert choice, dropless), optimal-transport routing (Sinkhorn
followed by rounding), the exact min-cost max-flow router and the
two-stage MaxScore router all live here.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import InfeasibleMarginals, InvalidK, RoutingError, ShapeMismatch, UnknownRouter
from .flow import build_graph, min_cost_max_flow
from .problem import RoutingProblem, default_capacity

__all__ = [
    "ROUTERS",
    "MaxScoreStages",
    "RoutingProblem",
    "TransportPlan",
    "default_capacity",
    "get_router",
    "maxscore_stages",
    "restrict_to_feasible",
    "round_transport",
    "route",
    "route_dropless",
    "route_expert_choice",
    "route_greedy_topk",
    "route_iterative",
    "route_maxscore",
    "route_mcmf",
    "route_sbase",
    "score",
    "sinkhorn",
]


def _ranked(affinities: np.ndarray) -> np.ndarray:
    """Expert indices per row, best first; ties to the lower index."""
    return np.argsort(-affinities, axis=1, kind="stable")


def score(plan, affinities) -> float:
    """Total routed affinity ``sum_ij P_ij * A_ij``."""
    p = np.asarray(plan)
    a = np.asarray(affinities, dtype=np.float64)
    if p.shape != a.shape:
        raise ShapeMismatch(f"plan shape {p.shape} does not match affinities shape {a.shape}")
    return float(np.sum(p * a))


def _greedy(problem: RoutingProblem):
    a = problem.affinities
    k = problem.demand
    order = _ranked(a)
    left = problem.capacity.copy()
    plan = np.zeros(a.shape, dtype=np.int64)
    dropped = []
    # rank-major: every token's first choice is served before any second choice
    for r in range(problem.k):
        for i in range(problem.n):
            if r >= k[i]:
                continue
            j = order[i, r]
            if left[j] > 0:
                plan[i, j] = 1
                left[j] -= 1
            else:
                dropped.append((i, r))
    return plan, left, dropped, order


def route_greedy_topk(problem: RoutingProblem) -> np.ndarray:
    """GShard-style top-k with hard capacity; overflowing slots are dropped.

    Ranks are processed in order (all first choices, then all second
    choices, ...), tokens by ascending index within a rank.
    """
    return _greedy(problem)[0]


def route_iterative(problem: RoutingProblem) -> np.ndarray:
    """Greedy top-k, then reroute each dropped slot.

    A dropped slot goes to the highest-affinity expert that still has room
    and is not already serving the token. Slots are revisited in token
    order; a slot with no such expert stays dropped.
    """
    plan, left, dropped, order = _greedy(problem)
    for i, _ in sorted(dropped):
        for j in order[i]:
            if plan[i, j] == 0 and left[j] > 0:
                plan[i, j] = 1
                left[j] -= 1
                break
    return plan


def route_expert_choice(problem: RoutingProblem) -> np.ndarray:
    """Each expert independently takes its ``c_j`` highest-affinity tokens.

    Token demand is ignored, so a token may end up with any number of
    experts, including none.
    """
    a = problem.affinities
    plan = np.zeros(a.shape, dtype=np.int64)
    for j in range(problem.e):
        chosen = np.argsort(-a[:, j], kind="stable")[: problem.capacity[j]]
        plan[chosen, j] = 1
    return plan


def route_dropless(problem: RoutingProblem) -> np.ndarray:
    """Plain top-``k_i`` per token with no capacity limit."""
    order = _ranked(problem.affinities)
    position = np.empty_like(order)
    np.put_along_axis(position, order, np.arange(problem.e)[None, :].repeat(problem.n, 0), axis=1)
    return (position < problem.demand[:, None]).astype(np.int64)


@dataclass
class TransportPlan:
    """Fractional plan from Sinkhorn, restricted to the real tokens and experts."""

    matrix: np.ndarray
    converged: bool
    iterations: int
    max_violation: float

    @property
    def not_converged(self) -> bool:
        return not self.converged


def _semi_dual(logk, row, col, g):
    return col @ g - row @ logsumexp(logk + g[None, :], axis=1)


def _sinkhorn_log(logk, row, col, max_iters, tol, newton=True):
    """Scale ``exp(logk)`` to row sums ``row`` and column sums ``col``.

    Works on the column potential ``g`` alone: each sweep scales the rows
    exactly, then updates ``g``. The plain update rescales the columns
    exactly. With ``newton`` the sweep also tries an extrapolated plain
    step and a damped Newton step on the concave dual in ``g`` (an
    ``e x e`` solve), keeping whichever raises the dual most, so it never
    does worse than plain scaling. All rows must have a finite entry and
    all marginals must be positive.
    """
    e = len(col)
    log_c = np.log(col)
    g = np.zeros(e)
    p = np.zeros(logk.shape)
    viol = np.inf
    it = 0
    for it in range(1, max_iters + 1):
        # row scaling is implicit in the row-wise softmax
        q = logk + g[None, :]
        pi = np.exp(q - logsumexp(q, axis=1, keepdims=True))
        p = row[:, None] * pi
        cs = p.sum(axis=0)
        grad = col - cs
        viol = max(np.abs(grad).max(), np.abs(p.sum(axis=1) - row).max())
        if viol < tol:
            return p, True, it, float(viol)

        with np.errstate(divide="ignore"):
            plain = log_c - np.log(cs)
        plain[~np.isfinite(plain)] = 0.0
        best = g + plain
        if newton and e > 1:
            fbest = _semi_dual(logk, row, col, best)
            # saturated rows make the dual piecewise linear; keep doubling
            # the plain step while it still pays
            t = 2.0
            while t < 1e6:
                ft = _semi_dual(logk, row, col, g + t * plain)
                if not ft > fbest:
                    break
                best, fbest = g + t * plain, ft
                t *= 2.0

            hess = np.diag(cs) - (pi * row[:, None]).T @ pi
            # the dual is flat along g + const, so pin g[-1]; a tiny ridge
            # keeps the reduced system regular
            h = hess[:-1, :-1]
            step = np.zeros(e)
            step[:-1] = np.linalg.solve(h + (1e-12 * np.trace(h) + 1e-300) * np.eye(e - 1), grad[:-1])
            f0 = _semi_dual(logk, row, col, g)
            slope = grad @ step
            if 0 <= slope < 1e-10 * (1.0 + abs(f0)):
                # the predicted gain is below the rounding of the dual
                # itself, so objective comparisons are noise; in this
                # region the full Newton step is the right one
                g = g + step
                g -= g[-1]
                continue
            t = 1.0
            while t > 1e-12:
                ft = _semi_dual(logk, row, col, g + t * step)
                if ft >= f0 + 1e-4 * t * slope:
                    if ft > fbest:
                        best = g + t * step
                    break
                t *= 0.5
        g = best - best[-1]
    return p, False, it, float(viol)


def _balanced_sinkhorn(a, demand, capacity, epsilon, max_iters, tol, allowed=None, allow_shortfall=False, newton=True):
    if not (np.isfinite(epsilon) and epsilon > 0):
        raise RoutingError(f"epsilon must be positive, got {epsilon}")
    if max_iters < 1 or not tol > 0:
        raise RoutingError(f"need max_iters >= 1 and tol > 0, got {max_iters} and {tol}")
    n, e = a.shape
    need = float(demand.sum())
    room = float(capacity.sum())
    if need <= 0:
        raise InfeasibleMarginals("total demand must be positive")
    if room < need and not allow_shortfall:
        raise InfeasibleMarginals(f"total capacity {room:g} is below total demand {need:g}")

    logk = a / epsilon
    if allowed is not None:
        logk = np.where(allowed, logk, -np.inf)
    row = demand.astype(np.float64)
    col = capacity.astype(np.float64)
    if allow_shortfall:
        # a dummy expert takes demand that cannot be served and a dummy
        # token takes capacity left idle; both have zero affinity
        logk = np.block([[logk, np.zeros((n, 1))], [np.zeros((1, e + 1))]])
        row = np.append(row, room)
        col = np.append(col, need)
    elif room > need:
        # idle expert slots are absorbed by a zero-affinity dummy token
        logk = np.vstack([logk, np.zeros((1, e))])
        row = np.append(row, room - need)

    # zero marginals force zero mass; solve on the rest
    rows = np.flatnonzero(row > 0)
    cols = np.flatnonzero(col > 0)
    sub = logk[np.ix_(rows, cols)]
    if np.any(np.all(np.isneginf(sub), axis=1)):
        raise InfeasibleMarginals("a token has demand but no expert it may use has capacity")
    ps, converged, it, viol = _sinkhorn_log(sub, row[rows], col[cols], max_iters, tol, newton)
    p = np.zeros(logk.shape)
    p[np.ix_(rows, cols)] = ps
    return TransportPlan(p[:n, :e], converged, it, viol)


def sinkhorn(
    problem: RoutingProblem, epsilon: float = 0.01, max_iters: int = 200, tol: float = 1e-6, newton: bool = True
) -> TransportPlan:
    """Entropic optimal transport of token demand onto expert capacity.

    Solves ``max <P, A> + epsilon * H(P)`` over nonnegative ``P`` with row
    sums ``k`` and column sums ``c`` by alternating row and column scaling
    of the kernel ``exp(A / epsilon)``, carried out in log space. When
    capacity exceeds demand a zero-affinity dummy token takes up the spare
    slots; it is stripped from the result.

    Plain scaling stalls for hundreds of sweeps when ``epsilon`` is small
    relative to the affinity gaps. By default each column update is
    therefore the better of exact rescaling and a Newton step on the
    column potentials.

    Parameters
    ----------
    problem : RoutingProblem
    epsilon : float
        Entropic regularization strength.
    max_iters : int
        Maximum number of row+column sweeps.
    tol : float
        Stop once the largest marginal violation (on the padded problem)
        drops below this.
    newton : bool
        Use the Newton-safeguarded column update. False gives textbook
        Sinkhorn iterations.

    Returns
    -------
    TransportPlan
        ``converged`` is False if ``max_iters`` was reached first.

    Raises
    ------
    InfeasibleMarginals
        If total capacity is smaller than total demand.
    """
    return _balanced_sinkhorn(
        problem.affinities, problem.demand, problem.capacity, epsilon, max_iters, tol, newton=newton
    )


def _round(values, demand, capacity, allowed=None):
    n, e = values.shape
    need = demand.astype(np.int64).copy()
    left = capacity.astype(np.int64).copy()
    plan = np.zeros((n, e), dtype=np.int64)
    remaining = int(need.sum())
    # descending value, ties by row-major cell index
    for cell in np.argsort(-values.ravel(), kind="stable"):
        if remaining == 0:
            break
        i, j = divmod(int(cell), e)
        if need[i] > 0 and left[j] > 0 and plan[i, j] == 0 and (allowed is None or allowed[i, j]):
            plan[i, j] = 1
            need[i] -= 1
            left[j] -= 1
            remaining -= 1
    return plan


def round_transport(plan, problem: RoutingProblem, allowed=None) -> np.ndarray:
    """Greedy rounding of a fractional plan to a binary one.

    Cells are visited in decreasing plan value (ties: lower token, then
    lower expert) and accepted while the token still needs experts and
    the expert has room. A pair is assigned at most once however much mass
    the fractional plan put on it.

    ``allowed`` optionally masks out cells that must never be assigned.
    """
    values = plan.matrix if isinstance(plan, TransportPlan) else np.asarray(plan, dtype=np.float64)
    if values.shape != problem.affinities.shape:
        raise ShapeMismatch(f"plan shape {values.shape} does not match problem shape {problem.affinities.shape}")
    return _round(values, problem.demand, problem.capacity, allowed)


def _fill_unmet(plan, demand, capacity, allowed=None):
    """Grow ``plan`` along augmenting paths until no token can gain an expert.

    Afterwards the number of assigned pairs is the maximum attainable under
    the demand/capacity/allowed constraints. Works in place.
    """
    n, e = plan.shape
    if allowed is None:
        allowed = np.ones((n, e), dtype=bool)
    load = plan.sum(axis=0)
    for i in range(n):
        while plan[i].sum() < demand[i]:
            via = {i: None}
            seen = np.zeros(e, dtype=bool)
            queue = deque([i])
            found = None
            while queue and found is None:
                u = queue.popleft()
                for j in range(e):
                    if seen[j] or plan[u, j] or not allowed[u, j]:
                        continue
                    seen[j] = True
                    if load[j] < capacity[j]:
                        found = (u, j)
                        break
                    for w in np.flatnonzero(plan[:, j]):
                        if w not in via:
                            via[w] = (u, j)
                            queue.append(w)
            if found is None:
                break
            u, j = found
            plan[u, j] = 1
            load[j] += 1
            while via[u] is not None:
                prev, jp = via[u]
                plan[u, jp] = 0
                plan[prev, jp] = 1
                u = prev
    return plan


def route_sbase(problem: RoutingProblem, epsilon: float = 0.01, max_iters: int = 200, tol: float = 1e-6) -> np.ndarray:
    """Optimal-transport routing: Sinkhorn on the whole problem, then rounding.

    When total capacity is short of total demand (common once capacities
    are floored), a zero-affinity dummy expert takes the excess demand in
    the transport step, and rounding serves as many slots as the real
    capacities allow. Augmenting paths then fill any slot that rounding
    left open although a feasible completion exists.
    """
    need = int(problem.demand.sum())
    if need == 0:
        return np.zeros(problem.affinities.shape, dtype=np.int64)
    short = problem.capacity.sum() < need
    tp = _balanced_sinkhorn(
        problem.affinities, problem.demand, problem.capacity, epsilon, max_iters, tol, allow_shortfall=short
    )
    plan = round_transport(tp, problem)
    return _fill_unmet(plan, problem.demand, problem.capacity)


@dataclass
class MaxScoreStages:
    top1: np.ndarray
    residual_capacity: np.ndarray
    transport: TransportPlan
    second: np.ndarray

    @property
    def plan(self) -> np.ndarray:
        return self.top1 + self.second


def maxscore_stages(
    problem: RoutingProblem, epsilon: float = 0.01, max_iters: int = 200, tol: float = 1e-6
) -> MaxScoreStages:
    """Both stages of the MaxScore top-2 router, for inspection.

    Stage 1 gives every token its argmax expert unconditionally and lowers
    each expert's capacity by what it received (never below zero).
    Stage 2 routes one more expert per token on the residual problem with
    the stage-1 pairs excluded, using Sinkhorn and greedy rounding. If the
    residual capacity cannot cover every token, as many are served as
    possible and the rest count as drops.
    """
    if np.any(problem.demand != 2):
        raise InvalidK("MaxScore routing requires every token to ask for exactly 2 experts")
    a = problem.affinities
    n, e = a.shape
    top1 = np.zeros((n, e), dtype=np.int64)
    top1[np.arange(n), np.argmax(a, axis=1)] = 1
    residual = np.maximum(0, problem.capacity - top1.sum(axis=0))
    allowed = top1 == 0
    masked = a * allowed
    ones = np.ones(n, dtype=np.int64)

    if residual.sum() == 0:
        tp = TransportPlan(np.zeros((n, e)), True, 0, 0.0)
        return MaxScoreStages(top1, residual, tp, np.zeros((n, e), dtype=np.int64))
    tp = _balanced_sinkhorn(masked, ones, residual, epsilon, max_iters, tol, allowed=allowed, allow_shortfall=True)
    second = _round(tp.matrix, ones, residual, allowed)
    _fill_unmet(second, ones, residual, allowed)
    return MaxScoreStages(top1, residual, tp, second)


def route_maxscore(problem: RoutingProblem, epsilon: float = 0.01, max_iters: int = 200, tol: float = 1e-6) -> np.ndarray:
    """MaxScore top-2 routing: unconditional top-1, Sinkhorn for the second expert.

    See :func:`maxscore_stages`. Because stage 1 ignores capacity, an
    expert that is the argmax of more than ``c_j`` tokens ends up over
    its capacity.
    """
    return maxscore_stages(problem, epsilon, max_iters, tol).plan


def route_mcmf(problem: RoutingProblem) -> np.ndarray:
    """Exact maximum-score binary assignment via min-cost max-flow.

    Among plans that serve the largest possible number of (token, expert)
    slots, returns one with the highest total affinity.
    """
    return min_cost_max_flow(build_graph(problem)).plan


def restrict_to_feasible(plan, problem: RoutingProblem) -> np.ndarray:
    """Trim a plan so rows respect ``k_i`` and columns respect ``c_j``.

    Over-full rows keep their highest-affinity experts, then over-full
    columns keep their highest-affinity tokens (ties to lower index). Used
    to score routers whose output ignores one of the marginals.
    """
    a = problem.affinities
    p = np.array(plan, dtype=np.int64, copy=True)
    for i in np.flatnonzero(p.sum(axis=1) > problem.demand):
        assigned = np.flatnonzero(p[i])
        keep = assigned[np.argsort(-a[i, assigned], kind="stable")[: problem.demand[i]]]
        p[i] = 0
        p[i, keep] = 1
    for j in np.flatnonzero(p.sum(axis=0) > problem.capacity):
        assigned = np.flatnonzero(p[:, j])
        keep = assigned[np.argsort(-a[assigned, j], kind="stable")[: problem.capacity[j]]]
        p[:, j] = 0
        p[keep, j] = 1
    return p


ROUTERS = {
    "greedy": route_greedy_topk,
    "iterative": route_iterative,
    "expert_choice": route_expert_choice,
    "dropless": route_dropless,
    "sbase": route_sbase,
    "maxscore": route_maxscore,
    "mcmf": route_mcmf,
}
_USES_SINKHORN = {"sbase", "maxscore"}


def get_router(name: str):
    try:
        return ROUTERS[name]
    except KeyError:
        raise UnknownRouter(f"unknown router {name!r}; expected one of {sorted(ROUTERS)}") from None


def route(name: str, problem: RoutingProblem, epsilon=0.01, max_iters=200, tol=1e-6) -> np.ndarray:
    """Run router ``name``; Sinkhorn settings are ignored by routers that do not use them."""
    fn = get_router(name)
    if name in _USES_SINKHORN:
        return fn(problem, epsilon=epsilon, max_iters=max_iters, tol=tol)
    return fn(problem)
