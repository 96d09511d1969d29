"""Min-cost max-flow on the bipartite token/expert network.

Node layout: source ``0``, tokens ``1..n``, experts ``n+1..n+e``, sink
``n+e+1``. Arcs are stored in pairs, forward arc ``2a`` and its residual
twin ``2a + 1``, so the partner of any arc is ``arc ^ 1``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import NegativeCycle
from .problem import RoutingProblem

__all__ = ["FlowGraph", "FlowResult", "build_graph", "min_cost_max_flow"]

# relaxation margin; keeps rounding-level "improvements" from cycling
_EPS = 1e-12


class FlowGraph:
    """Residual-ready arc storage for the token/expert network.

    Forward arcs are laid out source->token (``n``), expert->sink (``e``),
    then token->expert (``n * e``, token-major).
    """

    def __init__(self, num_tokens: int, num_experts: int):
        self.num_tokens = num_tokens
        self.num_experts = num_experts
        self.num_nodes = num_tokens + num_experts + 2
        self.head: list[int] = []
        self.tail: list[int] = []
        self.cap: list[int] = []
        self.cost: list[float] = []
        self.adj: list[list[int]] = [[] for _ in range(self.num_nodes)]

    @property
    def source(self) -> int:
        return 0

    @property
    def sink(self) -> int:
        return self.num_tokens + self.num_experts + 1

    def token_node(self, i: int) -> int:
        return 1 + i

    def expert_node(self, j: int) -> int:
        return 1 + self.num_tokens + j

    def add_arc(self, u: int, v: int, cap: int, cost: float) -> int:
        a = len(self.head)
        self.head += [v, u]
        self.tail += [u, v]
        self.cap += [int(cap), 0]
        self.cost += [float(cost), -float(cost)]
        self.adj[u].append(a)
        self.adj[v].append(a + 1)
        return a

    @property
    def num_arcs(self) -> int:
        """Number of forward arcs."""
        return len(self.head) // 2

    def forward_arcs(self) -> list[tuple[int, int, int, float]]:
        return [(self.tail[a], self.head[a], self.cap[a], self.cost[a]) for a in range(0, len(self.head), 2)]

    def token_expert_arc(self, i: int, j: int) -> int:
        n, e = self.num_tokens, self.num_experts
        return 2 * (n + e + i * e + j)


@dataclass
class FlowResult:
    flow_value: int
    total_cost: float
    plan: np.ndarray


def build_graph(problem: RoutingProblem) -> FlowGraph:
    """Network whose min-cost max-flow is the best binary assignment.

    Source->token arcs carry the demand ``k_i``, expert->sink arcs the
    capacity ``c_j``, and each token->expert arc has capacity 1 and cost
    ``-A_ij``.
    """
    n, e = problem.n, problem.e
    g = FlowGraph(n, e)
    for i in range(n):
        g.add_arc(g.source, g.token_node(i), problem.demand[i], 0.0)
    for j in range(e):
        g.add_arc(g.expert_node(j), g.sink, problem.capacity[j], 0.0)
    a = problem.affinities
    for i in range(n):
        u = g.token_node(i)
        for j in range(e):
            g.add_arc(u, g.expert_node(j), 1, -a[i, j])
    return g


def min_cost_max_flow(graph: FlowGraph) -> FlowResult:
    """Successive shortest augmenting paths, found with SPFA.

    SPFA (queue-based Bellman-Ford) tolerates the negative costs on
    token->expert arcs and their residual twins. Augmenting continues
    until the sink is unreachable, so the flow is maximum and, among
    maximum flows, of minimum cost. The input graph is not modified.
    """
    head, tail, cost, adj = graph.head, graph.tail, graph.cost, graph.adj
    cap = list(graph.cap)
    s, t, nv = graph.source, graph.sink, graph.num_nodes
    inf = float("inf")
    flow = 0

    while True:
        dist = [inf] * nv
        prev = [-1] * nv
        inq = [False] * nv
        count = [0] * nv
        dist[s] = 0.0
        q = deque([s])
        inq[s] = True
        while q:
            u = q.popleft()
            inq[u] = False
            du = dist[u]
            for a in adj[u]:
                if cap[a] > 0:
                    v = head[a]
                    nd = du + cost[a]
                    if nd < dist[v] - _EPS:
                        dist[v] = nd
                        prev[v] = a
                        if not inq[v]:
                            count[v] += 1
                            if count[v] > nv:
                                raise NegativeCycle("negative-cost cycle in residual graph")
                            q.append(v)
                            inq[v] = True
        if dist[t] == inf:
            break

        push = inf
        v = t
        while v != s:
            a = prev[v]
            push = min(push, cap[a])
            v = tail[a]
        v = t
        while v != s:
            a = prev[v]
            cap[a] -= push
            cap[a ^ 1] += push
            v = tail[a]
        flow += push

    n, e = graph.num_tokens, graph.num_experts
    first = 2 * (n + e)
    arcs = np.arange(first, first + 2 * n * e, 2)
    used = np.asarray(graph.cap, dtype=np.int64)[arcs] - np.asarray(cap, dtype=np.int64)[arcs]
    plan = used.reshape(n, e)
    total_cost = float(np.sum(plan * np.asarray(graph.cost)[arcs].reshape(n, e)))
    return FlowResult(flow_value=int(flow), total_cost=total_cost, plan=plan)
