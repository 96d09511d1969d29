"""Gating operators mapping router logits to token-expert affinities.

Every operator works on the last axis, so a single logit vector of shape
``(e,)`` and a batch of shape ``(n, e)`` are handled alike. Each operator
has a hand-written vector-Jacobian product reachable through
:func:`backward`; there is no general autodiff here.

All arithmetic is float64.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit, logsumexp

from .errors import EmptyInput, InvalidK, InvalidTemperature, NumericalDomain, RoutingError, UnknownOperator

__all__ = [
    "OPERATORS",
    "TemperatureSchedule",
    "apply",
    "arg_topk",
    "backward",
    "grad_topk",
    "iter_topk",
    "sigmoid",
    "soft_topk",
    "softkmax",
    "softmax",
    "temperature_at",
]

OPERATORS = ("softmax", "sigmoid", "soft_topk", "softkmax", "iter_topk", "grad_topk")

# grad_topk: exponent of the previous level's share, kept strictly below zero
_LOG_CLAMP = -1e-12
# shares above 1 + this are a real domain violation, not rounding
_DOMAIN_SLACK = 1e-9


def _as_logits(logits) -> np.ndarray:
    x = np.asarray(logits, dtype=np.float64)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise EmptyInput("logit vector must have at least one entry")
    if not np.all(np.isfinite(x)):
        raise RoutingError("logits must be finite")
    return x


def _check_k(k, e: int) -> int:
    if int(k) != k or not 1 <= k <= e:
        raise InvalidK(f"k must be an integer in [1, {e}], got {k}")
    return int(k)


def _check_t(t) -> float:
    t = float(t)
    if not np.isfinite(t) or t < 0:
        raise InvalidTemperature(f"temperature must be a finite value >= 0, got {t}")
    return t


def _softmax(x: np.ndarray) -> np.ndarray:
    ex = np.exp(x - x.max(axis=-1, keepdims=True))
    return ex / ex.sum(axis=-1, keepdims=True)


def _softmax_vjp(s: np.ndarray, g: np.ndarray) -> np.ndarray:
    return s * (g - np.sum(g * s, axis=-1, keepdims=True))


def softmax(logits) -> np.ndarray:
    """Numerically stable softmax over the last axis."""
    return _softmax(_as_logits(logits))


def sigmoid(logits) -> np.ndarray:
    return expit(_as_logits(logits))


def arg_topk(gates, k: int) -> np.ndarray:
    """0/1 indicator of the ``k`` largest entries along the last axis.

    Ties go to the lower index.
    """
    a = _as_logits(gates)
    k = _check_k(k, a.shape[-1])
    idx = np.argsort(-a, axis=-1, kind="stable")[..., :k]
    out = np.zeros_like(a)
    np.put_along_axis(out, idx, 1.0, axis=-1)
    return out


def soft_topk(logits, k: int, t: float) -> np.ndarray:
    """Softmax kept on the top-k entries and scaled by ``t`` elsewhere.

    ``t = 1`` gives plain softmax and ``t = 0`` gives softmax masked to the
    top-k support. The top-k set is taken from the logits.
    """
    x = _as_logits(logits)
    k = _check_k(k, x.shape[-1])
    t = _check_t(t)
    return _softmax(x) * _soft_topk_scale(x, k, t)


def _soft_topk_scale(x: np.ndarray, k: int, t: float) -> np.ndarray:
    mask = arg_topk(x, k)
    return mask + t * (1.0 - mask)


def _softkmax_trace(x: np.ndarray, k: int):
    y = np.zeros_like(x)
    states = []
    for _ in range(k):
        s = _softmax((1.0 - y) * x)
        states.append((y, s))
        y = y + s
    return y, states


def softkmax(logits, k: int) -> np.ndarray:
    """k rounds of ``y += softmax((1 - y) * x)`` starting from ``y = 0``."""
    x = _as_logits(logits)
    k = _check_k(k, x.shape[-1])
    return _softkmax_trace(x, k)[0]


def _iter_topk_trace(x: np.ndarray, k: int):
    ex = np.exp(x - x.max(axis=-1, keepdims=True))
    y = np.zeros_like(x)
    states = []
    for _ in range(k):
        h = (1.0 - y) * ex
        q = h / h.sum(axis=-1, keepdims=True)
        states.append((h, q))
        y = y + q
    return y, ex, states


def iter_topk(logits, k: int) -> np.ndarray:
    """k rounds of softmax reweighted by the mass not yet taken, ``w = 1 - y``."""
    x = _as_logits(logits)
    k = _check_k(k, x.shape[-1])
    return _iter_topk_trace(x, k)[0]


def _grad_topk_trace(x: np.ndarray, k: int):
    # level 1 is plain softmax: g = x, z = logsumexp(x) - log 1
    g = x
    z = logsumexp(x, axis=-1, keepdims=True)
    levels = []
    for m in range(2, k + 1):
        d = g - z
        if np.any(d > _DOMAIN_SLACK):
            raise NumericalDomain(f"grad_topk level {m - 1} share exceeds 1; log of a nonpositive value")
        clamped = d > _LOG_CLAMP
        d = np.minimum(d, _LOG_CLAMP)
        g_next = x + z + np.log1p(-np.exp(d))
        z_next = logsumexp(g_next, axis=-1, keepdims=True) - np.log(m)
        levels.append((d, clamped, g_next))
        g, z = g_next, z_next
    return np.exp(g - z), levels


def grad_topk(logits, k: int) -> np.ndarray:
    """Log-space top-k relaxation; level ``m`` sums to ``m``.

    ``log(exp(z) - exp(g))`` is evaluated as ``z + log1p(-exp(g - z))``
    with the exponent clamped to at most ``-1e-12``.
    """
    x = _as_logits(logits)
    k = _check_k(k, x.shape[-1])
    return _grad_topk_trace(x, k)[0]


def apply(op: str, logits, k: int = 1, t: float = 1.0) -> np.ndarray:
    """Run the forward pass of operator ``op``.

    ``k`` is ignored by softmax and sigmoid, ``t`` by everything except
    soft_topk.
    """
    if op == "softmax":
        return softmax(logits)
    if op == "sigmoid":
        return sigmoid(logits)
    if op == "soft_topk":
        return soft_topk(logits, k, t)
    if op == "softkmax":
        return softkmax(logits, k)
    if op == "iter_topk":
        return iter_topk(logits, k)
    if op == "grad_topk":
        return grad_topk(logits, k)
    raise UnknownOperator(f"unknown operator {op!r}; expected one of {OPERATORS}")


def backward(op: str, logits, upstream, k: int = 1, t: float = 1.0) -> np.ndarray:
    """Vector-Jacobian product of ``apply(op, logits, k, t)`` with ``upstream``.

    For soft_topk the top-k mask is held constant, so only the softmax
    factor is differentiated.
    """
    if op not in OPERATORS:
        raise UnknownOperator(f"unknown operator {op!r}; expected one of {OPERATORS}")
    x = _as_logits(logits)
    gy = np.asarray(upstream, dtype=np.float64)
    if gy.shape != x.shape:
        raise RoutingError(f"upstream shape {gy.shape} does not match logits shape {x.shape}")

    if op == "softmax":
        return _softmax_vjp(_softmax(x), gy)
    if op == "sigmoid":
        s = expit(x)
        return gy * s * (1.0 - s)

    k = _check_k(k, x.shape[-1])
    if op == "soft_topk":
        scale = _soft_topk_scale(x, k, _check_t(t))
        return _softmax_vjp(_softmax(x), gy * scale)

    if op == "softkmax":
        _, states = _softkmax_trace(x, k)
        gx = np.zeros_like(x)
        for y, s in reversed(states):
            gg = _softmax_vjp(s, gy)
            gx += gg * (1.0 - y)
            gy = gy - gg * x
        return gx

    if op == "iter_topk":
        _, ex, states = _iter_topk_trace(x, k)
        gx = np.zeros_like(x)
        for h, q in reversed(states):
            gh = (gy - np.sum(gy * q, axis=-1, keepdims=True)) / h.sum(axis=-1, keepdims=True)
            gx += gh * h
            gy = gy - gh * ex
        return gx

    # grad_topk
    y, levels = _grad_topk_trace(x, k)
    gg = gy * y
    gz = -np.sum(gg, axis=-1, keepdims=True)
    gx = np.zeros_like(x)
    for d, clamped, g_next in reversed(levels):
        gg = gg + gz * _softmax(g_next)
        gx += gg
        gz = np.sum(gg, axis=-1, keepdims=True)
        # d/dd log1p(-exp(d)) = -exp(d) / (1 - exp(d))
        gd = np.where(clamped, 0.0, gg * np.exp(d) / np.expm1(d))
        gg = gd
        gz = gz - np.sum(gd, axis=-1, keepdims=True)
    return gx + gg + gz * _softmax(x)


@dataclass(frozen=True)
class TemperatureSchedule:
    """Linear decay of the soft_topk temperature from ``t0`` to ``t_final``.

    Immutable; :meth:`advance` returns a new schedule.
    """

    t0: float = 4.0
    t_final: float = 1.0
    decay_steps: int = 1000
    current_step: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.t0) and self.t0 > 0):
            raise InvalidTemperature(f"t0 must be positive, got {self.t0}")
        if not (np.isfinite(self.t_final) and 0 <= self.t_final <= self.t0):
            raise InvalidTemperature(f"t_final must lie in [0, t0], got {self.t_final}")
        if self.decay_steps < 0 or self.current_step < 0:
            raise ValueError("decay_steps and current_step must be nonnegative")

    @property
    def t(self) -> float:
        return temperature_at(self, self.current_step)

    def advance(self, steps: int = 1) -> TemperatureSchedule:
        return replace(self, current_step=self.current_step + steps)


def temperature_at(schedule: TemperatureSchedule, step: int) -> float:
    if step < 0:
        raise ValueError(f"step must be nonnegative, got {step}")
    if step >= schedule.decay_steps:
        return float(schedule.t_final)
    frac = step / schedule.decay_steps
    return float(schedule.t0 + (schedule.t_final - schedule.t0) * frac)
