"""Synthetic routing problems, router comparisons and parameter sweeps.

Affinity families
-----------------
``uniform``
    All-zero logits through the gating operator, so every row is flat.
``gaussian:sigma``
    Logits i.i.d. ``N(0, sigma**2)`` through the operator.
``peaked:alpha``
    Standard normal logits plus ``alpha`` on one uniformly chosen expert
    per row, through the operator. Larger ``alpha`` makes the favourite
    expert more dominant.
``rand``
    Affinities drawn i.i.d. uniform on [0, 1); no operator.

Every draw comes from :class:`moeroute.harness.rng.Stream` keyed by the
spec's seed, so a spec fully determines its problem.
"""

from __future__ import annotations

import io
import json
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from .. import gate_ops
from ..assignment import ROUTERS, get_router, restrict_to_feasible, route, score
from ..errors import BadSpec, UnknownRouter
from ..metrics import aux_loss, drop_rate_by_rank, load_ratio
from ..problem import RoutingProblem, default_capacity
from .rng import Stream

__all__ = [
    "CSV_HEADER",
    "DISTRIBUTIONS",
    "SWEEP_PARAMS",
    "ComparisonRow",
    "SyntheticSpec",
    "compare",
    "compare_problem",
    "format_csv",
    "format_json",
    "generate",
    "parse_dist",
    "parse_op",
    "read_problem",
    "sweep",
    "sweep_csv",
]

DISTRIBUTIONS = ("uniform", "gaussian", "peaked", "rand")
SWEEP_PARAMS = ("n", "e", "k", "c_f", "alpha", "t")
CSV_HEADER = (
    "router",
    "seed",
    "n",
    "e",
    "k",
    "cf",
    "score",
    "score_ratio",
    "drop_r1",
    "drop_r2",
    "mean_load_ratio",
    "aux_loss",
    "wall_us",
)
_DEFAULT_PARAM = {"gaussian": 1.0, "peaked": 4.0}


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for one synthetic routing problem.

    ``param`` is sigma for ``gaussian`` and alpha for ``peaked``; other
    families ignore it. ``t`` is the soft_topk temperature.
    """

    n: int
    e: int
    k: int
    cf: float = 1.0
    dist: str = "gaussian"
    param: float = 1.0
    operator: str = "softmax"
    t: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.dist not in DISTRIBUTIONS:
            raise BadSpec(f"unknown distribution {self.dist!r}; expected one of {DISTRIBUTIONS}")
        if self.operator not in gate_ops.OPERATORS:
            raise BadSpec(f"unknown operator {self.operator!r}; expected one of {gate_ops.OPERATORS}")
        if self.n < 1 or self.e < 1:
            raise BadSpec(f"n and e must be >= 1, got n={self.n}, e={self.e}")
        if not 1 <= self.k <= self.e:
            raise BadSpec(f"k must lie in [1, e={self.e}], got {self.k}")
        if not (math.isfinite(self.cf) and self.cf > 0):
            raise BadSpec(f"capacity factor must be positive, got {self.cf}")
        if self.dist in _DEFAULT_PARAM and not (math.isfinite(self.param) and self.param > 0):
            raise BadSpec(f"{self.dist} parameter must be positive, got {self.param}")
        if not (math.isfinite(self.t) and self.t >= 0):
            raise BadSpec(f"temperature must be >= 0, got {self.t}")
        if not 0 <= self.seed < 2**64:
            raise BadSpec(f"seed must be a 64-bit unsigned integer, got {self.seed}")


def parse_dist(text: str) -> tuple[str, float]:
    """``"peaked:4"`` -> ``("peaked", 4.0)``; a missing parameter takes the family default."""
    name, _, arg = text.partition(":")
    if name not in DISTRIBUTIONS:
        raise BadSpec(f"unknown distribution {name!r}; expected one of {DISTRIBUTIONS}")
    if not arg:
        return name, _DEFAULT_PARAM.get(name, 1.0)
    try:
        return name, float(arg)
    except ValueError:
        raise BadSpec(f"bad distribution parameter in {text!r}") from None


def parse_op(text: str) -> tuple[str, float]:
    """``"soft_topk:0.5"`` -> ``("soft_topk", 0.5)``; temperature defaults to 1."""
    name, _, arg = text.partition(":")
    if name not in gate_ops.OPERATORS:
        raise BadSpec(f"unknown operator {name!r}; expected one of {gate_ops.OPERATORS}")
    try:
        return name, float(arg) if arg else 1.0
    except ValueError:
        raise BadSpec(f"bad temperature in {text!r}") from None


def generate(spec: SyntheticSpec) -> RoutingProblem:
    """Draw the problem described by ``spec``; same spec, same bits."""
    if not isinstance(spec, SyntheticSpec):
        raise BadSpec("expected a SyntheticSpec")
    n, e = spec.n, spec.e
    rng = Stream(spec.seed)
    if spec.dist == "rand":
        a = rng.uniform(n * e).reshape(n, e)
    else:
        if spec.dist == "uniform":
            logits = np.zeros((n, e))
        elif spec.dist == "gaussian":
            logits = spec.param * rng.normal(n * e).reshape(n, e)
        else:
            logits = rng.normal(n * e).reshape(n, e)
            logits[np.arange(n), rng.integers(e, n)] += spec.param
        a = gate_ops.apply(spec.operator, logits, spec.k, spec.t)
    return RoutingProblem.uniform(a, spec.k, spec.cf)


@dataclass
class ComparisonRow:
    """One router's result on one problem.

    ``score`` is measured on the plan trimmed to the capacity limits, so
    routers that ignore a limit (dropless, expert choice) are not credited
    for it and ``score_ratio`` against min-cost max-flow stays within
    [0, 1]. Drop rates and load ratio describe the untrimmed plan.
    ``drop_r2`` is None when ``k`` is 1.
    """

    router: str
    seed: int | None
    n: int
    e: int
    k: int
    cf: float
    score: float
    score_ratio: float
    drop_r1: float
    drop_r2: float | None
    mean_load_ratio: float
    aux_loss: float
    wall_us: int


def compare_problem(
    problem: RoutingProblem,
    routers,
    seed: int | None = None,
    epsilon: float = 0.01,
    max_iters: int = 200,
    tol: float = 1e-6,
    timing: bool = False,
):
    """Run each router on ``problem``; a min-cost max-flow row is appended if missing.

    Returns the rows and the plans, keyed by router name. ``wall_us`` is
    measured only when ``timing`` is set and is 0 otherwise, which keeps
    the output byte-stable.
    """
    routers = list(routers)
    for name in routers:
        get_router(name)
    if "mcmf" not in routers:
        routers.append("mcmf")

    plans = {}
    walls = {}
    for name in routers:
        start = time.perf_counter_ns()
        plans[name] = route(name, problem, epsilon=epsilon, max_iters=max_iters, tol=tol)
        walls[name] = (time.perf_counter_ns() - start) // 1000 if timing else 0

    a = problem.affinities
    best = score(plans["mcmf"], a)
    k = problem.k
    rows = []
    for name in routers:
        plan = plans[name]
        s = score(restrict_to_feasible(plan, problem), a)
        ratio = s / best if best > 0 else 1.0
        drops = drop_rate_by_rank(problem, plan, min(k, 2))
        with warnings.catch_warnings():
            # zero-capacity experts are simply left out of the mean
            warnings.simplefilter("ignore", RuntimeWarning)
            _, mean_load = load_ratio(plan, problem.capacity)
        rows.append(
            ComparisonRow(
                router=name,
                seed=seed,
                n=problem.n,
                e=problem.e,
                k=k,
                cf=problem.capacity_factor,
                score=s,
                score_ratio=ratio,
                drop_r1=float(drops[0]) if drops.size else 0.0,
                drop_r2=float(drops[1]) if drops.size > 1 else None,
                mean_load_ratio=mean_load,
                aux_loss=aux_loss(a, plan),
                wall_us=int(walls[name]),
            )
        )
    return rows, plans


def compare(spec: SyntheticSpec, routers, timing: bool = False, **solver) -> list[ComparisonRow]:
    """Generate the spec's problem and compare ``routers`` on it.

    Raises
    ------
    UnknownRouter
        If a name is not in the router registry.
    """
    for name in routers:
        if name not in ROUTERS:
            raise UnknownRouter(f"unknown router {name!r}; expected one of {tuple(ROUTERS)}")
    rows, _ = compare_problem(generate(spec), routers, seed=spec.seed, timing=timing, **solver)
    return rows


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".9g")
    return str(value)


def format_csv(rows, prefix: dict | None = None) -> str:
    """CSV text with a fixed header; floats carry 9 significant digits."""
    out = io.StringIO()
    head = list(prefix) if prefix else []
    out.write(",".join(head + list(CSV_HEADER)) + "\n")
    for row in rows:
        lead, row = row if prefix else ((), row)
        d = asdict(row)
        out.write(",".join([_fmt(v) for v in lead] + [_fmt(d[c]) for c in CSV_HEADER]) + "\n")
    return out.getvalue()


def _json_safe(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def format_json(rows, extra: dict | None = None) -> str:
    objs = [{c: _json_safe(asdict(r)[c]) for c in CSV_HEADER} for r in rows]
    payload = objs if extra is None else {"rows": objs, **extra}
    return json.dumps(payload, indent=2) + "\n"


def read_problem(path) -> RoutingProblem:
    """Read a problem file.

    Line 1 is ``n e k c_f``. An optional ``c: v1 ... ve`` line gives the
    capacities explicitly; otherwise they follow from ``c_f``. The next
    ``n`` lines hold ``e`` affinities each. Blank lines are skipped.
    """
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise BadSpec(f"{path}: empty problem file")
    try:
        n, e, k = (int(v) for v in lines[0].split()[:3])
        cf = float(lines[0].split()[3])
        if len(lines[0].split()) != 4:
            raise ValueError
    except (ValueError, IndexError):
        raise BadSpec(f"{path}: first line must be 'n e k c_f'") from None
    body = lines[1:]
    capacity = None
    if body and body[0].startswith("c:"):
        try:
            capacity = [int(v) for v in body[0][2:].split()]
        except ValueError:
            raise BadSpec(f"{path}: capacity line must hold integers") from None
        if len(capacity) != e:
            raise BadSpec(f"{path}: capacity line has {len(capacity)} entries, expected {e}")
        body = body[1:]
    if len(body) != n:
        raise BadSpec(f"{path}: expected {n} affinity rows, found {len(body)}")
    try:
        a = np.array([[float(v) for v in ln.split()] for ln in body])
    except ValueError:
        raise BadSpec(f"{path}: affinities must be decimal numbers") from None
    if a.shape != (n, e):
        raise BadSpec(f"{path}: every affinity row must hold {e} values")
    if capacity is None:
        if n < 1 or e < 1 or k < 1 or not cf > 0:
            raise BadSpec(f"{path}: need n, e, k >= 1 and c_f > 0")
        capacity = default_capacity(n, e, k, cf)
    return RoutingProblem.uniform(a, k, cf, capacity=capacity)


def _vary(spec: SyntheticSpec, param: str, value) -> SyntheticSpec:
    if param in ("n", "e", "k"):
        if float(value) != int(float(value)):
            raise BadSpec(f"{param} must be an integer, got {value}")
        return replace(spec, **{param: int(float(value))})
    if param == "c_f":
        return replace(spec, cf=float(value))
    if param == "alpha":
        if spec.dist != "peaked":
            raise BadSpec("alpha can only be varied for the peaked distribution")
        return replace(spec, param=float(value))
    if param == "t":
        return replace(spec, t=float(value))
    raise BadSpec(f"cannot vary {param!r}; expected one of {SWEEP_PARAMS}")


def _run_trial(args):
    spec, routers, solver = args
    return compare(spec, routers, **solver)


_NUMERIC = [f.name for f in fields(ComparisonRow) if f.name not in ("router", "seed", "n", "e", "k", "cf")]


def _aggregate(trial_rows: list[list[ComparisonRow]]):
    means, stds = [], []
    for per_router in zip(*trial_rows):
        first = per_router[0]
        mean_vals, std_vals = {}, {}
        for name in _NUMERIC:
            vals = [getattr(r, name) for r in per_router]
            if any(v is None for v in vals):
                mean_vals[name] = std_vals[name] = None
                continue
            arr = np.array(vals, dtype=np.float64)
            mean_vals[name] = float(arr.mean())
            std_vals[name] = float(arr.std())
        base = {"router": first.router, "seed": None, "n": first.n, "e": first.e, "k": first.k, "cf": first.cf}
        means.append(ComparisonRow(**base, **mean_vals))
        stds.append(ComparisonRow(**base, **std_vals))
    return means, stds


def sweep(base: SyntheticSpec, vary: str, values, trials: int, routers, jobs: int = 1, **solver):
    """Compare routers across values of one parameter.

    Trial ``t`` of every value uses seed ``base.seed + t``. For each value
    the per-trial rows come first (stat ``trial``), then one ``mean`` and
    one ``std`` row per router (population std). Trials may run in
    ``jobs`` worker processes; results are gathered in seed order, so the
    output does not depend on scheduling.

    Returns
    -------
    list of ((vary, value, stat), ComparisonRow)
    """
    if vary not in SWEEP_PARAMS:
        raise BadSpec(f"cannot vary {vary!r}; expected one of {SWEEP_PARAMS}")
    if trials < 1:
        raise BadSpec("trials must be >= 1")
    for name in routers:
        get_router(name)
    tasks = []
    for value in values:
        spec = _vary(base, vary, value)
        for t in range(trials):
            tasks.append(((value, t), (replace(spec, seed=base.seed + t), list(routers), solver)))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_trial, [task for _, task in tasks]))
    else:
        results = [_run_trial(task) for _, task in tasks]

    out = []
    for v_index, value in enumerate(values):
        block = results[v_index * trials : (v_index + 1) * trials]
        for rows in block:
            out += [((vary, value, "trial"), r) for r in rows]
        means, stds = _aggregate(block)
        out += [((vary, value, "mean"), r) for r in means]
        out += [((vary, value, "std"), r) for r in stds]
    return out


def sweep_csv(rows) -> str:
    return format_csv(rows, prefix={"vary": None, "value": None, "stat": None})
