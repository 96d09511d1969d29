"""Command-line entry point: ``moeroute route|compare|sweep|oracle``.

Exit status is 0 on success, 1 for usage errors (bad flags, bad specs or
files, unknown names) and 2 when a solve fails numerically or the
marginals are infeasible.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from ..errors import InfeasibleMarginals, NegativeCycle, NumericalDomain, RoutingError
from ..oracle import MAX_SEARCH, brute_force
from .synthetic import (
    SyntheticSpec,
    compare,
    compare_problem,
    format_csv,
    format_json,
    generate,
    parse_dist,
    parse_op,
    read_problem,
    sweep,
    sweep_csv,
)

ALL_ROUTERS = "greedy,iterative,expert_choice,dropless,sbase,maxscore,mcmf"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _solver_flags(p):
    p.add_argument("--epsilon", type=float, default=0.01, help="Sinkhorn regularization")
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--tol", type=float, default=1e-6)


def _spec_flags(p, seed=True):
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--e", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--cf", type=float, default=1.0)
    p.add_argument("--dist", default="gaussian", help="uniform | gaussian[:sigma] | peaked[:alpha] | rand")
    p.add_argument("--op", default="softmax", help="gating operator, soft_topk takes :t")
    if seed:
        p.add_argument("--seed", type=int, default=0)
    p.add_argument("--routers", default=ALL_ROUTERS, help="comma-separated router names")
    p.add_argument("--timing", action="store_true", help="measure wall time (makes output nondeterministic)")
    _solver_flags(p)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="moeroute", description="Token-to-expert routing experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("route", help="route one problem read from a file")
    p.add_argument("--input", required=True, help="problem file")
    p.add_argument("--router", required=True)
    _solver_flags(p)
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("compare", help="compare routers on one synthetic problem")
    _spec_flags(p)
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("sweep", help="compare routers while varying one parameter")
    p.add_argument("--vary", required=True, help="n | e | k | c_f | alpha | t")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--out", default="-", help="output CSV file, '-' for stdout")
    _spec_flags(p)

    p = sub.add_parser("oracle", help=f"brute-force best score (n*e*k <= {MAX_SEARCH})")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--e", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--cf", type=float, default=1.0)
    p.add_argument("--dist", default="rand")
    p.add_argument("--op", default="softmax")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")
    return parser


def _spec(args) -> SyntheticSpec:
    dist, param = parse_dist(args.dist)
    op, t = parse_op(args.op)
    return SyntheticSpec(args.n, args.e, args.k, args.cf, dist, param, op, t, args.seed)


def _routers(args) -> list[str]:
    names = [r.strip() for r in args.routers.split(",") if r.strip()]
    if not names:
        raise UsageError("--routers is empty")
    return names


def _solver(args) -> dict:
    return {"epsilon": args.epsilon, "max_iters": args.max_iters, "tol": args.tol}


def _cmd_route(args, out):
    problem = read_problem(args.input)
    rows, plans = compare_problem(problem, [args.router], **_solver(args))
    row = rows[0]
    plan = plans[args.router]
    if args.json:
        out.write(format_json([row], extra={"plan": plan.tolist()}))
    else:
        out.write(format_csv([row]))
        out.write("\n")
        for line in plan:
            out.write(" ".join(str(int(v)) for v in line) + "\n")


def _cmd_compare(args, out):
    rows = compare(_spec(args), _routers(args), timing=args.timing, **_solver(args))
    out.write(format_json(rows) if args.json else format_csv(rows))


def _cmd_sweep(args, out):
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise UsageError("--values is empty")
    rows = sweep(
        _spec(args), args.vary, values, args.trials, _routers(args), jobs=args.jobs, timing=args.timing, **_solver(args)
    )
    text = sweep_csv(rows)
    if args.out == "-":
        out.write(text)
    else:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _cmd_oracle(args, out):
    spec = _spec(argparse.Namespace(**vars(args), routers=""))
    problem = generate(spec)
    result = brute_force(problem)
    if args.json:
        out.write(json.dumps({"served": result.served, "score": result.score, "plan": result.plan.tolist()}) + "\n")
    else:
        out.write(f"served {result.served}\nscore {result.score:.9g}\n")
        for line in result.plan:
            out.write(" ".join(str(int(v)) for v in line) + "\n")


_COMMANDS = {"route": _cmd_route, "compare": _cmd_compare, "sweep": _cmd_sweep, "oracle": _cmd_oracle}


def main(argv=None, out=None) -> int:
    out = sys.stdout if out is None else out
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help and 1 (via _Parser) for bad flags
        return int(exc.code or 0)
    try:
        with np.errstate(all="ignore"):
            _COMMANDS[args.command](args, out)
    except (InfeasibleMarginals, NumericalDomain, NegativeCycle) as exc:
        print(f"moeroute: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (RoutingError, UsageError, OSError) as exc:
        print(f"moeroute: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
