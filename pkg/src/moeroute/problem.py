"""The routing problem shared by every solver."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidK, RoutingError, ShapeMismatch

__all__ = ["RoutingProblem", "default_capacity"]


def default_capacity(n: int, e: int, k: int, capacity_factor: float = 1.0) -> np.ndarray:
    """Per-expert capacity ``floor(c_f * k * n / e)``, identical for every expert."""
    if n < 1 or e < 1 or k < 1:
        raise ValueError("n, e and k must be >= 1")
    if not capacity_factor > 0:
        raise ValueError(f"capacity factor must be positive, got {capacity_factor}")
    # the 1e-9 nudge keeps e.g. 1.1 * 2 * 10 / 2 == 11 from flooring to 10
    c = math.floor(capacity_factor * k * n / e + 1e-9)
    return np.full(e, c, dtype=np.int64)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = a.copy()
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class RoutingProblem:
    """Affinity matrix plus per-token demand and per-expert capacity.

    Arrays are copied and made read-only on construction, so routers can
    never mutate the problem they were given.

    Parameters
    ----------
    affinities : array_like, shape (n, e)
        Nonnegative token-expert affinities.
    demand : array_like of int, shape (n,)
        Number of experts each token asks for, ``0 <= k_i <= e``.
    capacity : array_like of int, shape (e,)
        Maximum number of tokens each expert may serve.
    capacity_factor : float
        The factor ``capacity`` was derived with; informational.
    """

    affinities: np.ndarray
    demand: np.ndarray
    capacity: np.ndarray
    capacity_factor: float = 1.0

    def __post_init__(self):
        a = np.asarray(self.affinities, dtype=np.float64)
        if a.ndim != 2:
            raise ShapeMismatch(f"affinities must be 2-D, got shape {a.shape}")
        n, e = a.shape
        if n < 1 or e < 1:
            raise ShapeMismatch(f"need at least one token and one expert, got shape {a.shape}")
        if not np.all(np.isfinite(a)) or np.any(a < 0):
            raise RoutingError("affinities must be finite and nonnegative")

        k = np.asarray(self.demand)
        c = np.asarray(self.capacity)
        if k.shape != (n,):
            raise ShapeMismatch(f"demand has shape {k.shape}, expected ({n},)")
        if c.shape != (e,):
            raise ShapeMismatch(f"capacity has shape {c.shape}, expected ({e},)")
        if np.any(k != np.round(k)) or np.any(c != np.round(c)):
            raise RoutingError("demand and capacity must be integers")
        k = k.astype(np.int64)
        c = c.astype(np.int64)
        if np.any(k < 0) or np.any(k > e):
            raise InvalidK(f"every demand must lie in [0, {e}]")
        if np.any(c < 0):
            raise RoutingError("capacities must be nonnegative")

        object.__setattr__(self, "affinities", _readonly(a))
        object.__setattr__(self, "demand", _readonly(k))
        object.__setattr__(self, "capacity", _readonly(c))
        object.__setattr__(self, "capacity_factor", float(self.capacity_factor))

    @classmethod
    def uniform(cls, affinities, k: int, capacity_factor: float = 1.0, capacity=None) -> RoutingProblem:
        """Problem where every token asks for ``k`` experts.

        Capacity defaults to :func:`default_capacity`.
        """
        a = np.asarray(affinities, dtype=np.float64)
        if a.ndim != 2:
            raise ShapeMismatch(f"affinities must be 2-D, got shape {a.shape}")
        n, e = a.shape
        if capacity is None:
            capacity = default_capacity(n, e, k, capacity_factor)
        return cls(a, np.full(n, k, dtype=np.int64), capacity, capacity_factor)

    @property
    def n(self) -> int:
        return self.affinities.shape[0]

    @property
    def e(self) -> int:
        return self.affinities.shape[1]

    @property
    def k(self) -> int:
        """Largest per-token demand."""
        return int(self.demand.max()) if self.n else 0
