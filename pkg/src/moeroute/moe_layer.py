"""A toy mixture-of-experts layer with linear experts.

Small enough to check exactly: gates come from a gating operator applied to
``x @ W_g``, a router turns the gates into a 0/1 plan, and token ``i``
receives ``sum_j plan_ij * g_ij * (W_j @ x_i)``. Routing decisions are
discrete, so gradients are taken with the plan held fixed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import gate_ops
from .assignment import ROUTERS, route
from .errors import InvalidK, ShapeMismatch, UnknownOperator, UnknownRouter
from .metrics import DEFAULT_AUX_LAMBDA, RoutingReport, build_report
from .problem import RoutingProblem

__all__ = ["MoEConfig", "MoEOutput", "analytic_grad_Wg", "forward", "loss", "numeric_grad_Wg"]


@dataclass(frozen=True)
class MoEConfig:
    """Shape and routing choices of the toy layer.

    Parameters
    ----------
    d : int
        Hidden size.
    e : int
        Number of experts.
    k : int
        Experts per token.
    operator : str
        Gating operator, one of ``gate_ops.OPERATORS``.
    schedule : TemperatureSchedule
        Temperature for soft_topk, read at the ``step`` given to :func:`forward`.
    router : str
        Router name, one of ``assignment.ROUTERS``.
    capacity_factor : float
    aux_lambda : float
        Weight of the auxiliary loss reported alongside the outputs.
    """

    d: int
    e: int
    k: int = 2
    operator: str = "soft_topk"
    schedule: gate_ops.TemperatureSchedule = field(default_factory=gate_ops.TemperatureSchedule)
    router: str = "greedy"
    capacity_factor: float = 1.0
    aux_lambda: float = DEFAULT_AUX_LAMBDA

    def __post_init__(self):
        if self.d < 1 or self.e < 1:
            raise ShapeMismatch(f"d and e must be >= 1, got d={self.d}, e={self.e}")
        if not 1 <= self.k <= self.e:
            raise InvalidK(f"k must lie in [1, {self.e}], got {self.k}")
        if self.operator not in gate_ops.OPERATORS:
            raise UnknownOperator(f"unknown operator {self.operator!r}")
        if self.router not in ROUTERS:
            raise UnknownRouter(f"unknown router {self.router!r}")


@dataclass
class MoEOutput:
    outputs: np.ndarray
    plan: np.ndarray
    gates: np.ndarray
    report: RoutingReport


def _check(config: MoEConfig, w_g, experts, batch):
    w_g = np.asarray(w_g, dtype=np.float64)
    experts = np.asarray(experts, dtype=np.float64)
    x = np.asarray(batch, dtype=np.float64)
    d, e = config.d, config.e
    if w_g.shape != (d, e):
        raise ShapeMismatch(f"router weights have shape {w_g.shape}, expected {(d, e)}")
    if experts.shape != (e, d, d):
        raise ShapeMismatch(f"experts have shape {experts.shape}, expected {(e, d, d)}")
    if x.ndim != 2 or x.shape[1] != d:
        raise ShapeMismatch(f"batch has shape {x.shape}, expected (n, {d})")
    if not (np.all(np.isfinite(w_g)) and np.all(np.isfinite(experts)) and np.all(np.isfinite(x))):
        raise ValueError("weights, experts and batch must be finite")
    return w_g, experts, x


def _combine(plan, gates, experts, x):
    y = np.zeros_like(x)
    for j in range(plan.shape[1]):
        rows = np.flatnonzero(plan[:, j])
        if rows.size:
            # only tokens routed to expert j ever touch its weights
            y[rows] += gates[rows, j, None] * (x[rows] @ experts[j].T)
    return y


def forward(config: MoEConfig, w_g, experts, batch, step: int = 0, plan=None) -> MoEOutput:
    """Run the layer on a batch.

    Parameters
    ----------
    config : MoEConfig
    w_g : array_like, shape (d, e)
        Router weights.
    experts : array_like, shape (e, d, d)
        Expert ``j`` maps ``x`` to ``experts[j] @ x``.
    batch : array_like, shape (n, d)
    step : int
        Training step, used to read the temperature schedule.
    plan : array_like, shape (n, e), optional
        Use this plan instead of routing; gradient checks pass the plan
        from the unperturbed forward.

    Returns
    -------
    MoEOutput
        Outputs ``(n, d)``, plan, gates ``(n, e)`` and a routing report.
    """
    w_g, experts, x = _check(config, w_g, experts, batch)
    t = gate_ops.temperature_at(config.schedule, step)
    gates = gate_ops.apply(config.operator, x @ w_g, config.k, t)
    problem = RoutingProblem.uniform(gates, config.k, config.capacity_factor)
    if plan is None:
        plan = route(config.router, problem)
    else:
        plan = np.asarray(plan)
        if plan.shape != gates.shape:
            raise ShapeMismatch(f"plan has shape {plan.shape}, expected {gates.shape}")
    y = _combine(plan, gates, experts, x)
    return MoEOutput(y, plan, gates, build_report(problem, plan, config.aux_lambda))


def loss(outputs) -> float:
    """Mean over tokens of the squared output norm."""
    y = np.asarray(outputs)
    return float(np.sum(y * y) / y.shape[0])


def numeric_grad_Wg(config: MoEConfig, w_g, experts, batch, step: int = 0, plan=None, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of :func:`loss` with respect to ``w_g``.

    The plan is computed once at ``w_g`` (unless given) and held fixed
    for every perturbation.
    """
    w_g = np.array(w_g, dtype=np.float64)
    if plan is None:
        plan = forward(config, w_g, experts, batch, step).plan
    grad = np.zeros_like(w_g)
    for idx in np.ndindex(*w_g.shape):
        orig = w_g[idx]
        w_g[idx] = orig + h
        up = loss(forward(config, w_g, experts, batch, step, plan).outputs)
        w_g[idx] = orig - h
        down = loss(forward(config, w_g, experts, batch, step, plan).outputs)
        w_g[idx] = orig
        grad[idx] = (up - down) / (2 * h)
    return grad


def analytic_grad_Wg(config: MoEConfig, w_g, experts, batch, step: int = 0, plan=None) -> np.ndarray:
    """Gradient of :func:`loss` with respect to ``w_g`` by the chain rule.

    ``dL/dg_ij = plan_ij * <dL/dy_i, W_j x_i>``, pulled back through the
    gating operator's vector-Jacobian product and then through ``x @ w_g``.
    """
    w_g, experts, x = _check(config, w_g, experts, batch)
    out = forward(config, w_g, experts, x, step, plan)
    n = x.shape[0]
    dy = 2.0 * out.outputs / n
    expert_out = np.einsum("jab,nb->nja", experts, x)
    dgates = out.plan * np.einsum("na,nja->nj", dy, expert_out)
    t = gate_ops.temperature_at(config.schedule, step)
    dlogits = gate_ops.backward(config.operator, x @ w_g, dgates, config.k, t)
    return x.T @ dlogits
