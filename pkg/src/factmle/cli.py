"""Batch command line: ``fit``, ``path``, ``benchmark`` and ``simulate``.

Every command prints one JSON report (``"schema": 1``) on stdout. Tables
go to ``--csv PATH``. Exit codes: 0 converged, 2 iteration budget
exhausted, 1 input or numerical failure, 64 usage error. The environment
variable ``FACTMLE_THREADS`` caps BLAS threads.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from .baseline_em import EmConfig, solve_em
from .blockdiag import BlockConfig, BlockStructure, recover_block_model, solve_block
from .data_io import InputMode, SyntheticSpec, generate_synthetic, load_csv, save_csv, write_truth
from .errors import DomainError, FactmleError
from .model import recover_loadings
from .solver import Init, SolverConfig, Termination, solve
from .variants import ContinuationConfig, RidgeConfig, solve_continuation, solve_path, solve_ridge

SCHEMA = 1
EXIT_OK, EXIT_ERROR, EXIT_MAXITER, EXIT_USAGE = 0, 1, 2, 64
METHODS = ("factmle", "em")
DEFAULT_TOLS = (1e-2, 1e-3, 1e-4, 1e-5)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_ranks(text):
    """``"1..8"``, ``"1-8"`` or ``"1,2,5"`` to a list of ints."""
    text = text.strip()
    if not text:
        return []
    for sep in ("..", "-", ":"):
        if sep in text and "," not in text:
            a, b = text.split(sep, 1)
            return list(range(int(a), int(b) + 1))
    return [int(t) for t in text.split(",") if t.strip()]


def parse_floats(text):
    return [float(t) for t in text.split(",") if t.strip()]


def _exit_code(termination):
    return EXIT_MAXITER if termination is Termination.MAX_ITERS else EXIT_OK


def _clean(obj):
    """Replace non-finite floats by ``None`` so the report is strict JSON."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _emit(report, out=None):
    text = json.dumps(_clean(report), indent=1)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    print(text)


def _write_table(path, rows):
    if not path or not rows:
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow(_clean(row))


def _load(args):
    return load_csv(args.input, has_header=args.header, mode=InputMode(args.input_kind))


def _check_rank(r, p):
    if not 1 <= r < p:
        raise UsageError(f"rank must satisfy 1 <= r < p = {p}, got {r}")


def _solver_config(args, r):
    try:
        return SolverConfig(r=r, eps=args.eps, tol=args.tol, max_iters=args.max_iters,
                            init=Init(args.init), seed=args.seed, strategy=args.strategy)
    except DomainError as exc:
        raise UsageError(str(exc)) from None


def _trace_summary(trace):
    return {
        "iterations": trace.iterations,
        "termination": trace.termination.value,
        "final_objective": trace.final_objective,
        "wall_time": trace.wall_time,
    }


def cmd_fit(args):
    cov = _load(args)
    _check_rank(args.rank, cov.p)
    exclusive = sum(bool(v) for v in (args.ridge is not None, args.continuation, args.blocks))
    if exclusive > 1:
        raise UsageError("--ridge, --continuation and --blocks are mutually exclusive")
    config = _solver_config(args, args.rank)
    report = {"schema": SCHEMA, "command": "fit", "config": {
        "input": str(args.input), "input_kind": args.input_kind, "rank": args.rank, "eps": args.eps,
        "tol": args.tol, "max_iters": args.max_iters, "init": args.init, "seed": args.seed,
        "ridge": args.ridge, "continuation": args.continuation, "blocks": args.blocks,
    }}
    if args.blocks:
        try:
            st = BlockStructure.parse(args.blocks)
        except DomainError as exc:
            raise UsageError(str(exc)) from None
        if st.p != cov.p:
            raise UsageError(f"block sizes sum to {st.p}, expected p = {cov.p}")
        phi, trace = solve_block(cov, st, BlockConfig(r=args.rank, tol=args.tol, max_iters=args.max_iters))
        model = recover_block_model(cov, phi, args.rank)
        report["model"] = model.to_dict()
        report["neg_loglik"] = model.neg_loglik
    else:
        if args.ridge is not None:
            try:
                rc = RidgeConfig(r=args.rank, gamma=args.ridge, tol=args.tol, max_iters=args.max_iters,
                                 init=Init(args.init), seed=args.seed, strategy=args.strategy)
            except DomainError as exc:
                raise UsageError(str(exc)) from None
            phi, trace = solve_ridge(cov, rc)
        elif args.continuation:
            cc = ContinuationConfig.geometric(stop=args.eps)
            phi, pinned, traces = solve_continuation(cov, config, cc)
            trace = traces[-1]
            report["pinned"] = pinned
            report["schedule"] = list(cc.eps_schedule)
        else:
            phi, trace = solve(cov, config)
        model = recover_loadings(cov, phi, args.rank, strategy=args.strategy)
        report["model"] = model.to_dict()
        report["neg_loglik"] = model.neg_loglik
    report["objective"] = trace.final_objective
    report["trace"] = _trace_summary(trace)
    _emit(report, args.out)
    return _exit_code(trace.termination)


def cmd_path(args):
    cov = _load(args)
    ranks = parse_ranks(args.ranks)
    if not ranks:
        raise UsageError("empty rank list")
    if any(b <= a for a, b in zip(ranks, ranks[1:])):
        raise UsageError("ranks must be strictly increasing")
    for k in ranks:
        _check_rank(k, cov.p)
    path = solve_path(cov, ranks, _solver_config(args, ranks[0]))
    rows = [{
        "r": e.rank,
        "objective": e.trace.final_objective,
        "neg_loglik": e.model.neg_loglik,
        "iterations": e.trace.iterations,
        "wall_time": e.trace.wall_time,
        "termination": e.trace.termination.value,
    } for e in path]
    _write_table(args.csv, rows)
    _emit({"schema": SCHEMA, "command": "path",
           "config": {"input": str(args.input), "ranks": ranks, "eps": args.eps, "tol": args.tol},
           "rows": rows}, args.out)
    worst = max((e.trace.termination is Termination.MAX_ITERS for e in path), default=False)
    return EXIT_MAXITER if worst else EXIT_OK


def time_to_tolerance(objectives, times, f_star, tol):
    """First wall time at which ``(f_k - f*) / |f*| <= tol``; ``nan`` if never."""
    denom = max(abs(f_star), np.finfo(float).tiny)
    for f, t in zip(objectives, times):
        if (f - f_star) / denom <= tol:
            return float(t)
    return float("nan")


def _run_method(method, cov, r, args):
    if method == "factmle":
        cfg = SolverConfig(r=r, eps=args.eps, tol=args.tol, max_iters=args.max_iters)
        phi, trace = solve(cov, cfg)
        model = recover_loadings(cov, phi, r)
    else:
        model, trace = solve_em(cov, EmConfig(r=r, max_iters=args.max_iters, tol=args.tol))
    return model, trace


def _mean_se(values):
    v = np.asarray([x for x in values if math.isfinite(x)], dtype=float)
    if v.size == 0:
        return float("nan"), float("nan")
    se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se


def run_benchmark(datasets, ranks, methods, tol_levels, args):
    """Solve every (replicate, rank) cell with every method.

    Returns per-run rows and a summary table keyed by method, rank and
    tolerance with the mean and standard error of the time to tolerance.
    """
    runs = []
    for rep, cov in enumerate(datasets):
        for r in ranks:
            cell = {}
            for m in methods:
                model, trace = _run_method(m, cov, r, args)
                cell[m] = (model, trace)
            f_star = min(tr.final_objective for _, tr in cell.values())
            for m, (model, trace) in cell.items():
                row = {
                    "replicate": rep, "method": m, "r": r,
                    "final_objective": trace.final_objective, "f_star": f_star,
                    "iterations": trace.iterations, "wall_time": trace.wall_time,
                    "termination": trace.termination.value,
                }
                for tol in tol_levels:
                    row[f"time_to_{tol:g}"] = time_to_tolerance(trace.objectives, trace.times, f_star, tol)
                runs.append(row)
    summary = []
    for m in methods:
        for r in ranks:
            sel = [row for row in runs if row["method"] == m and row["r"] == r]
            for tol in tol_levels:
                vals = [row[f"time_to_{tol:g}"] for row in sel]
                mean, se = _mean_se(vals)
                summary.append({"method": m, "r": r, "tol": tol, "mean_time": mean, "se_time": se,
                                "reached": sum(math.isfinite(v) for v in vals), "replicates": len(sel)})
    return runs, summary


def cmd_benchmark(args):
    methods = [m.strip().lower() for m in args.methods.split(",") if m.strip()]
    unknown = [m for m in methods if m not in METHODS]
    if unknown or not methods:
        raise UsageError(f"unknown method(s) {unknown}; choose from {', '.join(METHODS)}")
    ranks = parse_ranks(args.ranks)
    if not ranks:
        raise UsageError("empty rank list")
    tol_levels = parse_floats(args.tol_levels)
    if not tol_levels or any(t <= 0 for t in tol_levels):
        raise UsageError("tolerance levels must be positive")
    if args.replicates < 1:
        raise UsageError("--replicates must be at least 1")
    if args.input:
        cov = _load(args)
        datasets = [cov] * args.replicates
        source = {"input": str(args.input)}
    else:
        try:
            specs = [SyntheticSpec(p=args.p, n=args.n, r0=args.r0, loading_mean=args.loading_mean,
                                   loading_var=args.loading_var, uniqueness_mean=args.uniqueness_mean,
                                   seed=args.seed + k) for k in range(args.replicates)]
        except DomainError as exc:
            raise UsageError(str(exc)) from None
        datasets = [generate_synthetic(s)[0] for s in specs]
        source = {"synthetic": {"p": args.p, "n": args.n, "r0": args.r0, "seed": args.seed}}
    for r in ranks:
        _check_rank(r, datasets[0].p)
    runs, summary = run_benchmark(datasets, ranks, methods, tol_levels, args)
    _write_table(args.csv, summary)
    _emit({"schema": SCHEMA, "command": "benchmark",
           "config": {**source, "replicates": args.replicates, "methods": methods, "ranks": ranks,
                      "tol_levels": tol_levels, "max_iters": args.max_iters, "tol": args.tol},
           "runs": runs, "summary": summary}, args.out)
    return EXIT_OK


def cmd_simulate(args):
    try:
        spec = SyntheticSpec(p=args.p, n=args.n, r0=args.r0, loading_mean=args.loading_mean,
                             loading_var=args.loading_var, uniqueness_mean=args.uniqueness_mean,
                             seed=args.seed)
    except DomainError as exc:
        raise UsageError(str(exc)) from None
    t0 = time.perf_counter()
    cov, truth = generate_synthetic(spec)
    elapsed = time.perf_counter() - t0
    save_csv(args.out_x, cov.x)
    write_truth(args.out_truth, truth)
    _emit({"schema": SCHEMA, "command": "simulate",
           "config": {"p": spec.p, "n": spec.n, "r0": spec.r0, "loading_mean": spec.loading_mean,
                      "loading_var": spec.loading_var, "uniqueness_mean": spec.uniqueness_mean,
                      "seed": spec.seed},
           "x": str(args.out_x), "truth": str(args.out_truth), "wall_time": elapsed})
    return EXIT_OK


def _add_input(sp, required=True):
    sp.add_argument("--input", required=required, type=Path, help="CSV file")
    sp.add_argument("--input-kind", choices=["data", "cov"], default="data")
    sp.add_argument("--header", action="store_true", help="skip the first CSV line")


def _add_solver(sp):
    sp.add_argument("--eps", type=float, default=1e-7)
    sp.add_argument("--tol", type=float, default=1e-8)
    sp.add_argument("--max-iters", type=int, default=2000)
    sp.add_argument("--init", choices=[i.value for i in Init if i is not Init.WARM], default="diagonal")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--strategy", choices=["dense", "gram", "iterative"], default=None)
    sp.add_argument("--out", type=Path, default=None, help="also write the JSON report here")


def _add_synthetic(sp, required):
    sp.add_argument("--p", type=int, required=required)
    sp.add_argument("--n", type=int, required=required)
    sp.add_argument("--r0", type=int, required=required)
    sp.add_argument("--loading-mean", type=float, default=10.0)
    sp.add_argument("--loading-var", type=float, default=1.0)
    sp.add_argument("--uniqueness-mean", type=float, default=10.0)


def build_parser():
    ap = _Parser(prog="factmle", description="Maximum-likelihood factor analysis by DC iteration.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = sub.add_parser("fit", help="fit one factor model")
    _add_input(sp)
    sp.add_argument("--rank", type=int, required=True)
    _add_solver(sp)
    sp.add_argument("--ridge", type=float, default=None, metavar="GAMMA")
    sp.add_argument("--continuation", action="store_true",
                    help="step eps down from 1e-2 to --eps and report pinned coordinates")
    sp.add_argument("--blocks", default=None, help="block sizes, e.g. 3,3,2")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("path", help="warm-started fits over a list of ranks")
    _add_input(sp)
    sp.add_argument("--ranks", required=True, help="e.g. 1..8 or 1,2,4")
    _add_solver(sp)
    sp.add_argument("--csv", type=Path, default=None)
    sp.set_defaults(func=cmd_path)

    sp = sub.add_parser("benchmark", help="replicated FACTMLE vs EM comparison")
    _add_input(sp, required=False)
    _add_synthetic(sp, required=False)
    sp.add_argument("--replicates", type=int, default=5)
    sp.add_argument("--methods", default="factmle,em")
    sp.add_argument("--ranks", default="2,4,6,8")
    sp.add_argument("--tol-levels", default=",".join(f"{t:g}" for t in DEFAULT_TOLS))
    _add_solver(sp)
    sp.add_argument("--csv", type=Path, default=None)
    sp.set_defaults(func=cmd_benchmark)

    sp = sub.add_parser("simulate", help="draw a synthetic data set")
    _add_synthetic(sp, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out-x", type=Path, required=True)
    sp.add_argument("--out-truth", type=Path, required=True)
    sp.set_defaults(func=cmd_simulate)
    return ap


def _dispatch(args):
    if args.command == "benchmark" and not args.input and None in (args.p, args.n, args.r0):
        raise UsageError("benchmark needs --input or all of --p, --n, --r0")
    return args.func(args)


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    threads = os.environ.get("FACTMLE_THREADS")
    try:
        if threads:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=int(threads)):
                return _dispatch(args)
        return _dispatch(args)
    except UsageError as exc:
        print(f"factmle {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FactmleError, OSError, ValueError) as exc:
        print(f"factmle {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
