"""Command-line front end: ``graphon-lab <command> ...``.

Exit codes: 0 ok, 1 usage error, 2 infeasible point, 3 non-convergence.
Every text output starts with a ``# seed=... config=...`` line.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

import numpy as np

from .core import ConstraintPoint, InvalidGraphon, MultipodalGraphon, classify
from .densities import edge_list, sample_graph
from .diagram import (SLOPE_JUMP_TOL, LowerBoundary, TooFewPoints, detect_transitions, grid_svg,
                      mask_csv, metadata_line, scan_csv, scan_grid, scan_line, stability_csv,
                      transitions_csv)
from .families import ParamRange, stability_boundary, stable_mask
from .optimize import FamilyInfeasible, Infeasible, SolveConfig, solve, solve_in_family

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_NONCONVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _range(text: str) -> tuple:
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo:hi, got {text!r}")
    if not lo <= hi:
        raise argparse.ArgumentTypeError("range must satisfy lo <= hi")
    return lo, hi


def _resolution(text: str) -> tuple:
    try:
        a, b = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected NxM, got {text!r}")
    return a, b


def _write(path, text: str):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _config(args) -> SolveConfig:
    return SolveConfig(max_podes=args.max_podes, window=args.window, samples=args.samples,
                       refine_tol=args.refine_tol, seed=args.seed, threads=args.threads)


def _describe(args, **extra) -> str:
    items = {k: v for k, v in vars(args).items()
             if k not in ("func", "threads", "out", "transitions", "svg", "mask") and v is not None}
    items.update(extra)
    return ";".join(f"{k}={v}" for k, v in sorted(items.items()))


def _load_graphon(path) -> MultipodalGraphon:
    with open(path) as fh:
        data = json.load(fh)
    if "graphon" in data:  # a solve result
        data = data["graphon"]
    return MultipodalGraphon.from_dict(data)


# ---------------------------------------------------------------- commands

def cmd_solve(args) -> int:
    cfg = _config(args)
    pt = ConstraintPoint(args.eps, args.tau)
    try:
        if args.family:
            if args.m is None:
                raise UsageError("--family needs --m")
            r = solve_in_family(args.family, args.m, pt, replace(cfg, threads=1))
        else:
            r = solve(pt, cfg)
    except (Infeasible, FamilyInfeasible, ParamRange) as exc:
        print(f"Infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    out = r.to_dict()
    out["seed"] = args.seed
    out["config"] = _describe(args)
    _write(args.out, json.dumps(out, indent=2) + "\n")
    return EXIT_OK if r.converged else EXIT_NONCONVERGED


def cmd_scan(args) -> int:
    cfg = _config(args)
    meta = dict(seed=args.seed, config=_describe(args))
    if args.line:
        if args.eps is None or args.tau is None:
            raise UsageError("scan --line needs --eps E and --tau lo:hi")
        records = scan_line(args.eps, args.tau, args.steps, cfg)
    else:
        if args.eps_range is None or args.tau is None:
            raise UsageError("scan --grid needs --eps lo:hi and --tau lo:hi")
        records = scan_grid(args.eps_range, args.tau, args.resolution, cfg)
    _write(args.out, scan_csv(records, **meta))
    if args.line and args.transitions:
        try:
            events = detect_transitions(records, args.slope_jump_tol)
        except TooFewPoints:
            events = []
        _write(args.transitions, transitions_csv(events, **meta))
    if args.svg:
        _write(args.svg, grid_svg(records))
    return EXIT_OK


def cmd_stability(args) -> int:
    meta = dict(seed=args.seed, config=_describe(args))
    curve = stability_boundary(args.n, args.eps, args.resolution)
    _write(args.out, stability_csv(curve, **meta))
    if args.mask:
        eps = np.linspace(*args.eps, args.grid)
        tau = np.linspace(*args.tau, args.grid)
        _write(args.mask, mask_csv(eps, tau, stable_mask(args.n, eps, tau), **meta))
    return EXIT_OK


def cmd_classify(args) -> int:
    g = _load_graphon(args.path)
    print(classify(g))
    return EXIT_OK


def cmd_sample(args) -> int:
    g = _load_graphon(args.path)
    adj = sample_graph(g, args.nodes, args.seed)
    _write(args.out, metadata_line(args.seed, _describe(args)) + edge_list(adj))
    return EXIT_OK


def cmd_boundary(args) -> int:
    lb = LowerBoundary(step=args.step)
    lo, hi = args.eps
    lb.fill([e for e in lb.nodes if lo <= e <= hi])
    if args.out in (None, "-"):
        raise UsageError("boundary needs --out PATH")
    lb.save(args.out)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=None,
                        help="worker cap (default: GRAPHON_LAB_THREADS or all cores)")
    common.add_argument("--out", "-o", default=None, help="output path (default stdout)")

    solver = argparse.ArgumentParser(add_help=False)
    d = SolveConfig()
    solver.add_argument("--max-podes", type=int, default=d.max_podes)
    solver.add_argument("--window", type=float, default=d.window)
    solver.add_argument("--samples", type=int, default=d.samples)
    solver.add_argument("--refine-tol", type=float, default=d.refine_tol)

    p = _Parser(prog="graphon-lab", description="Maximum-entropy multipodal graphons.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("solve", parents=[common, solver], help="optimize one constraint point")
    s.add_argument("--eps", type=float, required=True)
    s.add_argument("--tau", type=float, required=True)
    s.add_argument("--family", choices=["A", "B", "C", "F"])
    s.add_argument("--m", type=int)
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("scan", parents=[common, solver], help="line or grid scan to CSV")
    mode = s.add_mutually_exclusive_group(required=True)
    mode.add_argument("--line", action="store_true")
    mode.add_argument("--grid", action="store_true")
    s.add_argument("--eps", help="E for --line, lo:hi for --grid")
    s.add_argument("--tau", type=_range)
    s.add_argument("--steps", type=int, default=100)
    s.add_argument("--resolution", type=_resolution, default=(20, 20))
    s.add_argument("--transitions", help="also write detected transitions (line scans)")
    s.add_argument("--slope-jump-tol", type=float, default=SLOPE_JUMP_TOL)
    s.add_argument("--svg", help="also write an SVG of the scan")
    s.set_defaults(func=cmd_scan)

    s = sub.add_parser("stability", parents=[common], help="A(n,0) local stability boundary")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--eps", type=_range, required=True)
    s.add_argument("--resolution", type=int, default=50)
    s.add_argument("--mask", help="also write the negative-definite cells of a grid")
    s.add_argument("--tau", type=_range, default=(0.0, 1.0), help="tau range of the mask grid")
    s.add_argument("--grid", type=int, default=100, help="mask grid points per axis")
    s.set_defaults(func=cmd_stability)

    s = sub.add_parser("classify", parents=[common], help="phase label of a graphon JSON")
    s.add_argument("path")
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("sample", parents=[common], help="W-random graph as an edge list")
    s.add_argument("path")
    s.add_argument("--nodes", type=int, required=True)
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("boundary", parents=[common], help="cache the lower boundary")
    s.add_argument("--eps", type=_range, default=(0.0, 1.0))
    s.add_argument("--step", type=float, default=1.0 / 400)
    s.set_defaults(func=cmd_boundary)
    return p


def _split_eps(args):
    """``--eps`` is a number for line scans and a range for grids."""
    args.eps_range = None
    if args.command != "scan" or args.eps is None:
        return
    try:
        if args.grid:
            args.eps_range, args.eps = _range(args.eps), None
        else:
            args.eps = float(args.eps)
    except (argparse.ArgumentTypeError, ValueError) as exc:
        raise UsageError(f"bad --eps: {exc}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _split_eps(args)
        return args.func(args)
    except (UsageError, InvalidGraphon, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
