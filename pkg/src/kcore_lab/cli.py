"""Command-line experiment runner: ``kcore-lab <command> [flags]``.

Every command writes a CSV whose first line names its schema version. All
randomness derives from ``(seed, trial)``, so outputs do not depend on the
number of workers.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .branching import DEFAULT_EPS_PA, DEFAULT_MAX_ITER, BranchingSpec, find_jumps, prob_A, threshold_scan
from .errors import CapabilityError, ValidationError
from .graphs import BlockGraph, ConstantGraph, GridGraph, PaleyGraph, is_prime, k_core, percolate
from .kernels import (
    MAX_GRID_LEVEL, EmbeddedKernel, StepKernel, cut_distance, cut_norm, difference, embed_graph,
    finitary_lower_approx, parse_preset,
)
from .plot import emit_plot

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_CAPABILITY = 0, 2, 3, 4
SCHEMA_VERSION = 1
POINTWISE_LEVEL = 8  # 256-block lower approximation for presets without a step form

VERIFY_COLUMNS = ["experiment_id", "trial", "n", "c", "k", "seed", "kcore_size", "kcore_fraction",
                  "predicted_fraction", "status", "wallclock_ms"]
SUMMARY_COLUMNS = ["experiment_id", "trials", "n", "c", "k", "seed", "mean_fraction", "stddev_fraction",
                   "predicted_target", "predicted_embedded", "gap_target", "gap_embedded",
                   "mean_abs_gap", "status"]
THRESHOLD_COLUMNS = ["experiment_id", "kind", "c", "prob_A", "jump", "status"]
CONTINUITY_COLUMNS = ["experiment_id", "index", "cut_distance", "cut_status", "prob_A", "prob_A_limit",
                      "gap", "status"]
CUTNORM_COLUMNS = ["experiment_id", "mode", "value", "status"]


def fmt(x) -> str:
    """Fixed CSV number format: integers verbatim, floats to 12 significant digits."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        return format(0.0 if x == 0 else x, ".12g")
    return str(x)


def render_csv(command: str, columns: list[str], rows: list[dict]) -> str:
    buf = io.StringIO()
    buf.write(f"# schema: kcore-lab/{command}/{SCHEMA_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(row.get(col)) for col in columns])
    return buf.getvalue()


def write_output(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
        return
    Path(out).write_text(text)


def experiment_id(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


def resolve_workers(requested: int | None) -> int:
    if requested is None:
        env = os.environ.get("KCORE_LAB_WORKERS")
        if env:
            try:
                requested = int(env)
            except ValueError:
                raise ValidationError(f"KCORE_LAB_WORKERS must be an integer, got {env!r}") from None
        else:
            requested = os.cpu_count() or 1
    if requested < 1:
        raise ValidationError("workers must be at least 1")
    return requested


# --------------------------------------------------------------------------
# Validation helpers


def _need(cond: bool, msg: str) -> None:
    if not cond:
        raise ValidationError(msg)


def _check_k(k):
    _need(k is not None and k >= 2, "--k must be an integer >= 2")


def _check_c(c, name="--c"):
    _need(c is not None and math.isfinite(c) and c >= 0, f"{name} must be a finite nonnegative number")


def _check_common(args):
    _need(args.tol > 0, "--tol must be positive")
    _need(args.depth is None or args.depth >= 1, "--depth must be >= 1")


# --------------------------------------------------------------------------
# verify / paley


_WORKER_GRAPH = None


def _init_worker(graph):
    global _WORKER_GRAPH
    _WORKER_GRAPH = graph


def _run_trial(job):
    trial, c, k, seed, strategy, timing = job
    t0 = time.perf_counter()
    h = percolate(_WORKER_GRAPH, c, seed, strategy=strategy, trial=trial)
    size = k_core(h, k).size
    ms = (time.perf_counter() - t0) * 1e3 if timing else None
    return trial, size, ms


def run_trials(graph, c, k, seed, strategy, trials, workers, timing=False):
    jobs = [(t, c, k, seed, strategy, timing) for t in range(trials)]
    if workers == 1 or trials <= 1:
        _init_worker(graph)
        results = [_run_trial(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(graph,)) as ex:
            results = list(ex.map(_run_trial, jobs, chunksize=max(1, trials // (4 * workers))))
    return sorted(results)


def _graph_for(preset, n):
    step = preset.step()
    if preset.tag == "constant":
        return ConstantGraph(n, step.bound)
    if step is not None:
        return BlockGraph(n, step)
    return GridGraph(n, preset.evaluator(), preset.bound)


def _target_kernel(preset) -> StepKernel:
    step = preset.step()
    if step is None:
        step = finitary_lower_approx(preset.evaluator(), POINTWISE_LEVEL, grid_level=MAX_GRID_LEVEL)
    return step


def _predict(kernel, c, k, args):
    res = prob_A(BranchingSpec(kernel, scale=c), k, args.depth, tol=args.tol, max_iter=args.max_iter)
    return res.value, res.converged


def _verify_core(args, graph, target, label, command):
    n = graph.n
    config = {"command": command, "kernel": label, "n": n, "c": args.c, "k": args.k, "trials": args.trials,
              "seed": args.seed, "strategy": args.strategy, "depth": args.depth, "tol": args.tol}
    eid = experiment_id(config)
    workers = resolve_workers(args.workers)

    pred_t, ok_t = _predict(target, args.c, args.k, args)
    pred_e, ok_e = _predict(EmbeddedKernel(graph), args.c, args.k, args)
    status = "ok" if ok_t and ok_e else "unconverged"

    results = run_trials(graph, args.c, args.k, args.seed, args.strategy, args.trials, workers,
                         args.record_timing)
    rows = [{"experiment_id": eid, "trial": t, "n": n, "c": args.c, "k": args.k, "seed": args.seed,
             "kcore_size": size, "kcore_fraction": size / n, "predicted_fraction": pred_t,
             "status": status, "wallclock_ms": ms} for t, size, ms in results]
    write_output(render_csv(command, VERIFY_COLUMNS, rows), args.out)
    if rows:
        fr = np.array([r["kcore_fraction"] for r in rows])
        summary = {"experiment_id": eid, "trials": len(rows), "n": n, "c": args.c, "k": args.k,
                   "seed": args.seed, "mean_fraction": float(fr.mean()),
                   "stddev_fraction": float(fr.std(ddof=1)) if len(rows) > 1 else 0.0,
                   "predicted_target": pred_t, "predicted_embedded": pred_e,
                   "gap_target": abs(float(fr.mean()) - pred_t), "gap_embedded": abs(float(fr.mean()) - pred_e),
                   "mean_abs_gap": float(np.abs(fr - pred_t).mean()), "status": status}
        text = render_csv(f"{command}-summary", SUMMARY_COLUMNS, [summary])
        if args.out in (None, "-"):
            sys.stderr.write(text)
        else:
            Path(str(args.out) + ".summary.csv").write_text(text)
    return EXIT_OK


def cmd_verify(args):
    _need(args.kernel is not None, "verify needs --kernel")
    _need(args.n is not None and args.n >= 2, "--n must be an integer >= 2")
    _check_c(args.c)
    _check_k(args.k)
    _need(args.trials >= 0, "--trials must be nonnegative")
    _check_common(args)
    preset = parse_preset(args.kernel)
    return _verify_core(args, _graph_for(preset, args.n), _target_kernel(preset), preset.label(), "verify")


def cmd_paley(args):
    _need(args.q is not None and len(args.q) == 1, "paley needs exactly one --q")
    q = args.q[0]
    _need(is_prime(q) and q % 4 == 1, "--q must be a prime congruent to 1 mod 4")
    _check_c(args.c)
    _check_k(args.k)
    _need(args.trials >= 0, "--trials must be nonnegative")
    _check_common(args)
    return _verify_core(args, PaleyGraph(q), StepKernel.constant(0.5), f"paley:{q}", "paley")


# --------------------------------------------------------------------------
# threshold


def cmd_threshold(args):
    _need(args.kernel is not None, "threshold needs --kernel")
    _check_k(args.k)
    _check_c(args.c_min, "--c-min")
    _check_c(args.c_max, "--c-max")
    _need(args.c_min < args.c_max, "--c-min must be below --c-max")
    _need(args.grid >= 2, "--grid must be at least 2")
    _check_common(args)
    preset = parse_preset(args.kernel)
    kernel = _target_kernel(preset)
    config = {"command": "threshold", "kernel": preset.label(), "k": args.k, "c_min": args.c_min,
              "c_max": args.c_max, "grid": args.grid, "eps_pa": args.eps_pa, "tol": args.tol}
    eid = experiment_id(config)
    scan = threshold_scan(kernel, args.k, args.c_min, args.c_max, args.eps_pa, grid=args.grid,
                          tol=args.tol, max_iter=args.max_iter)
    jumps = find_jumps(kernel, args.k, scan.curve, tol=args.tol, max_iter=args.max_iter)
    curve_status = "ok" if scan.unconverged == 0 else "unconverged"
    rows = [{"experiment_id": eid, "kind": "curve", "c": float(c), "prob_A": float(p), "status": curve_status}
            for c, p in scan.curve]
    rows.append({"experiment_id": eid, "kind": "threshold", "c": scan.c_star, "status": scan.status})
    rows += [{"experiment_id": eid, "kind": "jump", "c": loc, "jump": size, "status": "ok"} for loc, size in jumps]
    write_output(render_csv("threshold", THRESHOLD_COLUMNS, rows), args.out)
    if args.plot:
        if args.out in (None, "-"):
            raise ValidationError("--plot needs --out to name a CSV file")
        emit_plot(args.out, "c", "prob_A", args.plot, title=f"P(A) for {preset.label()}, k={args.k}")
    return EXIT_OK


# --------------------------------------------------------------------------
# continuity


def cmd_continuity(args):
    _check_c(args.c)
    _check_k(args.k)
    _check_common(args)
    rows = []
    if args.q:
        for q in args.q:
            _need(is_prime(q) and q % 4 == 1, f"--q {q} is not a prime congruent to 1 mod 4")
        limit = StepKernel.constant(0.5)
        family = [(q, lambda q=q: PaleyGraph(q)) for q in args.q]
        label = "paley"
    else:
        _need(args.kernel is not None, "continuity needs --kernel or --q")
        _need(args.levels is not None and all(0 <= m <= MAX_GRID_LEVEL for m in args.levels),
              f"--levels must lie in [0, {MAX_GRID_LEVEL}]")
        preset = parse_preset(args.kernel)
        evaluator = preset.evaluator()
        _need(callable(evaluator), "kernel is not pointwise evaluable")
        top = max(args.levels)
        grid_level = min(MAX_GRID_LEVEL, top + 4)
        limit = preset.step() or finitary_lower_approx(evaluator, grid_level, grid_level=grid_level)
        family = [(m, lambda m=m: finitary_lower_approx(evaluator, m, grid_level=grid_level)) for m in args.levels]
        label = preset.label()
    config = {"command": "continuity", "family": label, "index": [i for i, _ in family], "c": args.c,
              "k": args.k, "seed": args.seed, "depth": args.depth, "tol": args.tol}
    eid = experiment_id(config)
    p_lim, ok_lim = _predict(limit, args.c, args.k, args)
    for index, build in family:
        member = build()
        if isinstance(member, StepKernel):
            kernel, lazy = member, member
        else:
            kernel, lazy = embed_graph(member), EmbeddedKernel(member)
        dist = cut_distance(kernel, limit, seed=args.seed)
        del kernel
        p, ok = _predict(lazy, args.c, args.k, args)
        rows.append({"experiment_id": eid, "index": index, "cut_distance": dist.value, "cut_status": dist.status,
                     "prob_A": p, "prob_A_limit": p_lim, "gap": abs(p - p_lim),
                     "status": "ok" if ok and ok_lim else "unconverged"})
    write_output(render_csv("continuity", CONTINUITY_COLUMNS, rows), args.out)
    if args.plot:
        if args.out in (None, "-"):
            raise ValidationError("--plot needs --out to name a CSV file")
        emit_plot(args.out, "index", "cut_distance", args.plot, title=f"cut distance to the limit, {label}")
    return EXIT_OK


# --------------------------------------------------------------------------
# cutnorm


def cmd_cutnorm(args):
    _need(args.kernel is not None and args.other is not None, "cutnorm needs --kernel and --other")
    a, b = _target_kernel(parse_preset(args.kernel)), _target_kernel(parse_preset(args.other))
    config = {"command": "cutnorm", "kernel": args.kernel, "other": args.other, "seed": args.seed,
              "restarts": args.restarts}
    eid = experiment_id(config)
    diff = difference(a, b)
    rows = []
    try:
        rows.append({"experiment_id": eid, "mode": "exact", "value": cut_norm(diff, "exact"), "status": "exact"})
    except CapabilityError:
        rows.append({"experiment_id": eid, "mode": "exact", "status": "too-many-blocks"})
    rows.append({"experiment_id": eid, "mode": "heuristic", "status": "lower-bound",
                 "value": cut_norm(diff, "heuristic", restarts=args.restarts, seed=args.seed)})
    write_output(render_csv("cutnorm", CUTNORM_COLUMNS, rows), args.out)
    return EXIT_OK


# --------------------------------------------------------------------------
# plot


def cmd_plot(args):
    _need(args.csv is not None and args.x is not None and args.y is not None, "plot needs --csv, --x and --y")
    _need(args.out not in (None, "-"), "plot needs --out")
    emit_plot(args.csv, args.x, args.y, args.out, series_column=args.series)
    return EXIT_OK


# --------------------------------------------------------------------------
# Entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="kcore-lab", description="k-core experiments on kernel-driven random graphs.")
    p.add_argument("--version", action="version", version=f"kcore-lab {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--kernel", help="preset name[:params] or step-kernel JSON file")
        sp.add_argument("--k", type=int)
        sp.add_argument("--c", type=float)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--depth", type=int, help="finite depth d for A_d (default: the limit)")
        sp.add_argument("--tol", type=float, default=1e-12)
        sp.add_argument("--max-iter", type=int, default=DEFAULT_MAX_ITER)
        sp.add_argument("--out", help="output CSV path (default: stdout)")
        sp.add_argument("--plot", help="SVG output path")
        return sp

    def trials(sp):
        sp.add_argument("--trials", type=int, default=1)
        sp.add_argument("--workers", type=int, help="worker processes (default: $KCORE_LAB_WORKERS or CPU count)")
        sp.add_argument("--strategy", choices=["naive", "fast"], default="fast")
        sp.add_argument("--record-timing", action="store_true", help="fill wallclock_ms (breaks byte reproducibility)")

    v = common(sub.add_parser("verify", help="k-core size vs branching-process prediction"))
    v.add_argument("--n", type=int)
    trials(v)
    v.set_defaults(func=cmd_verify)

    pa = common(sub.add_parser("paley", help="verify on a percolated Paley graph against constant 1/2"))
    pa.add_argument("--q", type=int, nargs="+")
    trials(pa)
    pa.set_defaults(func=cmd_paley)

    t = common(sub.add_parser("threshold", help="scan P(A) over c and locate the threshold"))
    t.add_argument("--c-min", type=float, default=0.0)
    t.add_argument("--c-max", type=float, default=10.0)
    t.add_argument("--grid", type=int, default=101)
    t.add_argument("--eps-pa", type=float, default=DEFAULT_EPS_PA)
    t.set_defaults(func=cmd_threshold)

    co = common(sub.add_parser("continuity", help="cut distance and P(A) along a converging family"))
    co.add_argument("--q", type=int, nargs="+", help="Paley family")
    co.add_argument("--levels", type=int, nargs="+", help="dyadic refinement levels of --kernel")
    co.set_defaults(func=cmd_continuity)

    cn = sub.add_parser("cutnorm", help="cut distance between two kernels in both modes")
    cn.add_argument("--kernel")
    cn.add_argument("--other")
    cn.add_argument("--seed", type=int, default=0)
    cn.add_argument("--restarts", type=int, default=32)
    cn.add_argument("--out")
    cn.set_defaults(func=cmd_cutnorm)

    pl = sub.add_parser("plot", help="SVG line plot of two CSV columns")
    pl.add_argument("--csv")
    pl.add_argument("--x")
    pl.add_argument("--y")
    pl.add_argument("--series", help="column whose values split the rows into series")
    pl.add_argument("--out")
    pl.set_defaults(func=cmd_plot)
    return p


def _fail(code: int, kind: str, err: BaseException) -> int:
    msg = " ".join(str(err).split()) or type(err).__name__
    sys.stderr.write(json.dumps({"error": kind, "message": msg}) + "\n")
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except ValidationError as e:
        return _fail(EXIT_CONFIG, "config", e)
    except CapabilityError as e:
        return _fail(EXIT_CAPABILITY, "capability", e)
    except OSError as e:
        return _fail(EXIT_IO, "io", e)


if __name__ == "__main__":
    sys.exit(main())
