"""Token-to-expert routing for mixture-of-experts layers.

Routers (greedy top-k, iterative rerouting, expert choice, dropless,
Sinkhorn-based, two-stage MaxScore and exact min-cost max-flow), the gating
operators that produce their affinities, load-balance diagnostics and a
toy MoE layer.
"""

from . import gate_ops, metrics, moe_layer, oracle
from .assignment import (
    ROUTERS,
    TransportPlan,
    maxscore_stages,
    restrict_to_feasible,
    round_transport,
    route,
    route_dropless,
    route_expert_choice,
    route_greedy_topk,
    route_iterative,
    route_maxscore,
    route_mcmf,
    route_sbase,
    score,
    sinkhorn,
)
from .errors import (
    BadSpec,
    EmptyInput,
    InfeasibleMarginals,
    InvalidK,
    InvalidTemperature,
    NegativeCycle,
    NumericalDomain,
    RoutingError,
    ShapeMismatch,
    UnknownOperator,
    UnknownRouter,
)
from .flow import build_graph, min_cost_max_flow
from .problem import RoutingProblem, default_capacity

__version__ = "0.1.0"
