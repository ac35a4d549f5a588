"""Command-line front end: ``crystalwalk analyze | simulate | compare``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from .analysis import analyze, emit_json, emit_text
from .lattice import BUILTIN_NAMES, LatticeError, LatticeState, NumericalError, builtin, load_lattice
from .montecarlo import (
    WalkConfig, clt_stats, grid_steps, path_map, prepare_walk, simulate_positions, standardized_endpoints,
)
from .stationary import stationary_measure
from .transition import SupportBudgetExceeded, bouquet_explicit, iterate_steps, ratio_table

EXIT_INVALID = 2
EXIT_NUMERICAL = 3


def _add_input(parser: argparse.ArgumentParser) -> None:
    src = parser.add_mutually_exclusive_group(required=True)
    src.add_argument("--builtin", choices=BUILTIN_NAMES, help="use a builtin lattice")
    src.add_argument("--input", type=Path, help="lattice description (JSON)")
    parser.add_argument("--p", help="forward probability for bouquet1, e.g. 0.6667 or 2/3")


def _load(args):
    if args.input is not None:
        if args.p is not None:
            raise LatticeError("--p only applies to --builtin bouquet1")
        return load_lattice(args.input)
    return builtin(args.builtin, args.p)


def _write(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text)


def cmd_analyze(args) -> int:
    lattice, kernel = _load(args)
    report = analyze(lattice, kernel, args.base if args.base is not None else 0)
    doc = report.to_document()
    _write(emit_json(doc) if args.format == "json" else emit_text(doc), args.out)
    return 0


def _parse_grid(text: str | None) -> tuple[float, ...]:
    if not text:
        return (1.0,)
    try:
        return tuple(float(t) for t in text.split(","))
    except ValueError:
        raise LatticeError(f"bad time grid {text!r}") from None


def cmd_simulate(args) -> int:
    lattice, kernel = _load(args)
    try:
        config = WalkConfig(args.walkers, args.steps, args.seed, args.kernel, args.eps,
                            _parse_grid(args.grid), args.threads)
    except ValueError as exc:
        raise LatticeError(str(exc)) from None
    prep = prepare_walk(lattice, kernel, config)
    n = config.steps
    record = sorted(set(grid_steps(n, config.time_grid)) | {n})
    pos = simulate_positions(lattice, prep.kernel, prep.realization, config.walkers, n, config.seed,
                             record=record, threads=config.threads)
    endpoint = standardized_endpoints(pos[n], n, prep.centre, prep.metric)
    stats = clt_stats(endpoint)

    frame = prep.metric.to_orthonormal
    centre = np.asarray(prep.centre)
    paths = []
    for t in config.time_grid:
        values = (path_map(pos, n, t) - math.sqrt(n) * t * centre) @ frame.T
        paths.append({"t": t, **clt_stats(values).to_document()})

    m = stationary_measure(lattice, kernel)
    drift = m.edge_flow(lattice.quotient, kernel) @ lattice.voltage.astype(float)
    doc = {
        "schema": 1,
        "lattice": lattice.name,
        "kernel": config.kernel_choice,
        "eps": config.interpolation_eps if config.kernel_choice == "interpolated" else None,
        "walkers": config.walkers,
        "steps": n,
        "seed": config.seed,
        "centre": centre.tolist(),
        "frame": frame.tolist(),
        "drift_estimate": (pos[n].mean(axis=0) / n).tolist(),
        "asymptotic_direction": drift.tolist(),
        "asymptotic_direction_frame": (drift @ frame.T).tolist(),
        "stats": stats.to_document(),
        "path": paths,
    }
    sys.stdout.write(json.dumps(doc, indent=2) + "\n")

    if args.csv is not None:
        d = lattice.rank
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["walker"] + [f"xi_{i + 1}" for i in range(d)] + [f"z_{i + 1}" for i in range(d)])
            for i, (raw, z) in enumerate(zip(pos[n], endpoint)):
                w.writerow([i] + ["%.17g" % v for v in raw] + ["%.17g" % v for v in z])
    return 0


def cmd_compare(args) -> int:
    lattice, kernel = _load(args)
    if args.steps < 0:
        raise LatticeError("--steps must be non-negative")
    report = analyze(lattice, kernel)
    start = LatticeState(lattice.quotient.vertex_index(args.start) if args.start else 0,
                         (0,) * lattice.rank)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n", "min_ratio", "max_ratio", "support_size"])
    fmt = lambda v: "%.17g" % v

    if args.mode == "rate":
        if args.steps > 0:
            rows = ratio_table(lattice, kernel, report.changed, start, args.steps, window=args.window,
                               realization=report.realization, metric=report.albanese)
            for r in rows:
                w.writerow([r.n, fmt(r.min_ratio), fmt(r.max_ratio), r.support_size])
    else:
        if lattice.quotient.n_vertices != 1:
            raise LatticeError("closed-form mode needs a single-vertex quotient")
        p_iter = iterate_steps(lattice, kernel, start, args.steps)
        q_iter = iterate_steps(lattice, report.changed.kernel, start, args.steps)
        for p_dist, q_dist in zip(p_iter, q_iter):
            if p_dist.n == 0:
                continue
            ratios = [q_dist.mass[key] / bouquet_explicit(lattice, p_dist, report.changed, report.realization,
                                                          LatticeState(*key))
                      for key in p_dist.mass]
            w.writerow([p_dist.n, fmt(min(ratios)), fmt(max(ratios)), len(ratios)])
    _write(buf.getvalue(), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crystalwalk", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="full deterministic report")
    _add_input(a)
    a.add_argument("--format", choices=("json", "text"), default="json")
    a.add_argument("--base", help="vertex pinned at the origin of the realization")
    a.add_argument("--out", type=Path)
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("simulate", help="Monte Carlo endpoint statistics (JSON)")
    _add_input(s)
    s.add_argument("--kernel", choices=("original", "changed", "interpolated"), default="original")
    s.add_argument("--eps", type=float, help="interpolation parameter (default steps^-1/2)")
    s.add_argument("--walkers", type=int, default=10_000)
    s.add_argument("--steps", type=int, default=1_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--grid", help="comma-separated times in [0, 1] for the scaled path")
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--csv", type=Path, help="write per-walker endpoints here")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("compare", help="exact n-step ratio table (CSV)")
    _add_input(c)
    c.add_argument("--steps", type=int, default=12)
    c.add_argument("--mode", choices=("rate", "closed-form"), default="rate",
                   help="rate: tilted / (p exp(n M_p)); closed-form: tilted / single-vertex formula")
    c.add_argument("--start", help="start vertex (default: first vertex)")
    c.add_argument("--window", type=float,
                   help="only endpoints within WINDOW*sqrt(n) of the drift centre (Albanese length)")
    c.add_argument("--out", type=Path)
    c.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (LatticeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericalError, SupportBudgetExceeded) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
