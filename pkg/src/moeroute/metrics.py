"""Load-balance loss and routing diagnostics.

Drop rates, load ratios and the per-rank affinity profile describe how a
plan treats the tokens' preferred experts; the auxiliary loss is the
usual product of mean gate mass and mean dispatch fraction per expert.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ShapeMismatch
from .problem import RoutingProblem

__all__ = [
    "RoutingReport",
    "aux_loss",
    "build_report",
    "drop_rate_by_rank",
    "load_ratio",
    "mean_affinity_by_rank",
    "slot_drop_rate",
]

DEFAULT_AUX_LAMBDA = 1e-2


def _pair(affinities, plan):
    a = np.asarray(affinities, dtype=np.float64)
    p = np.asarray(plan, dtype=np.float64)
    if a.ndim != 2 or a.shape != p.shape:
        raise ShapeMismatch(f"affinities {a.shape} and plan {p.shape} must be matching 2-D arrays")
    return a, p


def aux_loss(affinities, plan, lam: float = DEFAULT_AUX_LAMBDA) -> float:
    """Auxiliary load-balance loss.

    ``lam * (1/e) * sum_j mean_i(A_ij) * mean_i(P_ij)``. It is smallest when
    the experts that receive the most gate mass receive the fewest tokens.

    Parameters
    ----------
    affinities : array_like, shape (n, e)
    plan : array_like, shape (n, e)
        Assignment plan, usually 0/1.
    lam : float
        Loss weight.
    """
    a, p = _pair(affinities, plan)
    e = a.shape[1]
    return float(lam * np.dot(a.mean(axis=0), p.mean(axis=0)) / e)


def _rank_order(affinities: np.ndarray) -> np.ndarray:
    # descending, ties to the lower expert index
    return np.argsort(-affinities, axis=1, kind="stable")


def drop_rate_by_rank(problem: RoutingProblem, plan, k: int | None = None) -> np.ndarray:
    """Fraction of tokens whose rank-``r`` expert is not in their plan row.

    Ranks come from the problem's affinities, highest first with ties to the
    lower expert index. Entry ``r - 1`` holds rank ``r`` for ``r = 1..k``;
    ``k`` defaults to the largest demand.
    """
    a, p = _pair(problem.affinities, plan)
    k = problem.k if k is None else int(k)
    k = min(k, a.shape[1])
    order = _rank_order(a)[:, :k]
    served = np.take_along_axis(p, order, axis=1) > 0
    return 1.0 - served.mean(axis=0)


def slot_drop_rate(plan, demand) -> float:
    """Share of requested (token, slot) pairs left without an expert."""
    p = np.asarray(plan)
    k = np.asarray(demand)
    total = k.sum()
    if total == 0:
        return 0.0
    served = np.minimum(p.sum(axis=1), k).sum()
    return float(1.0 - served / total)


def load_ratio(plan, capacity) -> tuple[np.ndarray, float]:
    """Tokens per expert over its capacity, sorted ascending, and their mean.

    Experts with zero capacity have no meaningful ratio; they are left out
    and a ``RuntimeWarning`` names them.
    """
    p = np.asarray(plan)
    c = np.asarray(capacity, dtype=np.float64)
    if p.ndim != 2 or c.shape != (p.shape[1],):
        raise ShapeMismatch(f"capacity {c.shape} does not match plan {p.shape}")
    keep = c > 0
    if not keep.all():
        warnings.warn(
            f"experts {np.flatnonzero(~keep).tolist()} have zero capacity and are left out of the load ratio",
            RuntimeWarning,
            stacklevel=2,
        )
    ratios = np.sort(p.sum(axis=0)[keep] / c[keep])
    mean = float(ratios.mean()) if ratios.size else float("nan")
    return ratios, mean


def mean_affinity_by_rank(affinities, k: int | None = None) -> np.ndarray:
    """Mean over tokens of each row's ``r``-th largest affinity, ``r = 1..k``."""
    a = np.asarray(affinities, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeMismatch(f"affinities must be 2-D, got shape {a.shape}")
    desc = -np.sort(-a, axis=1)
    if k is not None:
        desc = desc[:, :k]
    return desc.mean(axis=0)


@dataclass
class RoutingReport:
    """Diagnostics of one plan on one problem."""

    drop_rate_by_rank: np.ndarray
    mean_affinity_by_rank: np.ndarray
    load_ratio: np.ndarray
    mean_load_ratio: float
    total_score: float
    aux_loss: float
    slot_drop_rate: float

    def to_dict(self) -> dict:
        d = asdict(self)
        for key, val in d.items():
            if isinstance(val, np.ndarray):
                d[key] = val.tolist()
        return d


def build_report(problem: RoutingProblem, plan, lam: float = DEFAULT_AUX_LAMBDA) -> RoutingReport:
    a, p = _pair(problem.affinities, plan)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        ratios, mean = load_ratio(p, problem.capacity)
    return RoutingReport(
        drop_rate_by_rank=drop_rate_by_rank(problem, p),
        mean_affinity_by_rank=mean_affinity_by_rank(a, problem.k),
        load_ratio=ratios,
        mean_load_ratio=mean,
        total_score=float(np.sum(a * p)),
        aux_loss=aux_loss(a, p, lam),
        slot_drop_rate=slot_drop_rate(p, problem.demand),
    )
