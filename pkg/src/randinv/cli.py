"""Command-line sweep runner.

    randinv run --config sweep.ini [--out DIR] [--seeds 0,1,2] [--budget-secs S] [--threads T]
    randinv table results.csv [--out table.md]
    randinv spectrum --config sweep.ini [--out DIR]
    randinv bounds --config sweep.ini [--out DIR]

Exit codes: 0 success, 1 configuration or input error, 2 a solve was flagged
as not converged (run) or a hard inequality failed (bounds), 3 the time
budget ran out (partial results are written).
"""

import argparse
import csv
import json
import os
import statistics
import sys
import time
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import (
    check_linear_perturbation_bound,
    check_mean_concentration,
    check_outer_product_concentration,
    check_triple_product_tail,
    spectrum_report,
    write_reports_csv,
)
from .config import ConfigError, load_config, serialize_config
from .core import MAX_DENSE_DIM, ScaledIdentityCovariance
from .problems import make_bilaplacian_prior, make_identity_prior, make_problem, make_random_linear
from .randomize import RandomizationPlan, SketchDistribution, draw_sketch
from .solvers import MethodId, relative_error, solve

RESULT_COLUMNS = ["problem", "method", "N", "seed", "rel_err_vs_map_pct",
                  "rel_err_vs_truth_pct", "iterations", "flags", "wall_ms"]

EXIT_OK, EXIT_CONFIG, EXIT_FLAGGED, EXIT_BUDGET = 0, 1, 2, 3


def _g17(x):
    return format(float(x), ".17g")


def resolve_threads(value):
    """Thread count from the flag/config, else RANDINV_THREADS, else 1."""
    if value:
        return max(1, int(value))
    env = os.environ.get("RANDINV_THREADS", "")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        raise ConfigError(f"RANDINV_THREADS must be an integer, got {env!r}") from None


def reference_map(problem, spec, cache_dir):
    """u_MAP for a problem, cached on disk under a hash of the resolved spec."""
    path = None
    if cache_dir:
        path = Path(cache_dir) / f"map-{spec.content_hash()}.npy"
        if path.exists():
            u = np.load(path)
            if u.shape == (problem.n,):
                return u
    u = solve("MAP", problem).estimate
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp.npy")
        np.save(tmp, u)
        os.replace(tmp, path)
    return u


def sweep_cells(cfg):
    """(method, N, seed) cells in output order; MAP has one cell per seed with N = 0."""
    cells = []
    for m in cfg.methods:
        mid = MethodId.parse(m)
        if mid is MethodId.MAP:
            cells += [(mid, 0, s) for s in cfg.seeds]
        else:
            cells += [(mid, N, s) for N in cfg.N for s in cfg.seeds]
    return cells


def _run_cell(problem, truth, u_map, cfg, cell):
    method, N, seed = cell
    t0 = time.perf_counter()
    if method is MethodId.MAP:
        res = solve(method, problem)
        est = u_map
    else:
        plan = RandomizationPlan.for_method(method, N, seed=seed,
                                            distribution=cfg.sketch_distribution)
        res = solve(method, problem, plan)
        est = res.estimate
    wall = 1e3 * (time.perf_counter() - t0)
    return dict(method=method.value, N=N, seed=seed,
                err_map=relative_error(est, u_map), err_truth=relative_error(est, truth),
                iterations=res.iterations, flags=";".join(sorted(res.flags)), wall=wall)


def write_results(rows, problem_id, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in rows:
            w.writerow([problem_id, r["method"], r["N"], r["seed"], _g17(r["err_map"]),
                        _g17(r["err_truth"]), r["iterations"], r["flags"], f"{r['wall']:.3f}"])


def cmd_run(cfg, out=None, threads=None, log=print):
    """Run a sweep; returns the exit code.  Writes results.csv and manifest.json."""
    start = time.monotonic()
    out = Path(out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    threads = resolve_threads(threads if threads is not None else cfg.threads)
    spec = cfg.problem.resolved()
    problem, truth = make_problem(spec)
    u_map = reference_map(problem, spec, cfg.map_cache or str(out / "cache"))
    cells = sweep_cells(cfg)
    results = {}
    over_budget = False

    def expired():
        return time.monotonic() - start > cfg.budget_secs

    with ThreadPoolExecutor(threads) as pool:
        pending = {}
        queue = list(enumerate(cells))
        while queue or pending:
            while queue and len(pending) < threads and not over_budget:
                if expired():
                    over_budget = True
                    break
                i, cell = queue.pop(0)
                pending[pool.submit(_run_cell, problem, truth, u_map, cfg, cell)] = i
            if over_budget and not pending:
                break
            done, _ = wait(pending, return_when=FIRST_COMPLETED)
            for fut in done:
                i = pending.pop(fut)
                results[i] = fut.result()
                r = results[i]
                log(f"{r['method']:>12s} N={r['N']:<7d} seed={r['seed']:<4d} "
                    f"err={r['err_map']:.4g}% {r['flags']}")
            if expired() and queue:
                over_budget = True
                queue.clear()
    rows = [results[i] for i in sorted(results)]
    write_results(rows, spec.problem, out / "results.csv")
    manifest = dict(version=__version__, numpy=np.__version__, problem_hash=spec.content_hash(),
                    cells=len(cells), completed=len(rows), threads=threads,
                    config=serialize_config(cfg))
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    if over_budget and len(rows) < len(cells):
        return EXIT_BUDGET
    if any("not_converged" in r["flags"].split(";") for r in rows):
        return EXIT_FLAGGED
    return EXIT_OK


def read_results(path):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RESULT_COLUMNS:
            raise ConfigError(f"{path}: unexpected columns {reader.fieldnames}")
        rows = list(reader)
    if not rows:
        raise ConfigError(f"{path}: no data rows")
    return rows


def cmd_table(rows):
    """Markdown table: one row per method, one column per N, median error over seeds."""
    methods, Ns, cells = [], set(), {}
    for r in rows:
        m, N = r["method"], int(r["N"])
        if m not in methods:
            methods.append(m)
        Ns.add(N)
        cells.setdefault((m, N), []).append(float(r["rel_err_vs_map_pct"]))
    Ns = sorted(Ns)
    lines = ["| method | " + " | ".join(f"N={N}" for N in Ns) + " |",
             "|---|" + "---:|" * len(Ns)]
    for m in methods:
        vals = [f"{statistics.median(cells[(m, N)]):.2f}" if (m, N) in cells else "-" for N in Ns]
        lines.append(f"| {m} | " + " | ".join(vals) + " |")
    return "\n".join(lines) + "\n"


def cmd_spectrum(cfg, out=None):
    """Write spectrum.csv comparing the precision spectrum with sketched versions."""
    opts = cfg.spectrum_options()
    spec = cfg.problem.resolved()
    if opts["prior"] == "identity":
        n = spec.n if spec.problem == "deconv1d" else spec.grid**2
        prior = make_identity_prior(n, spec.alpha or 1.0)
    elif opts["prior"] == "bilaplacian":
        prior = make_bilaplacian_prior(spec.grid, spec.prior_delta or 8.0, spec.prior_gamma or 1.0,
                                       spec.theta_matrix() if spec.theta1 else None)
    else:
        raise ConfigError(f"unknown prior {opts['prior']!r}")
    if prior.dim > MAX_DENSE_DIM:
        raise ConfigError(f"prior of dimension {prior.dim} is too large to materialize")
    dist = SketchDistribution(cfg.sketch_distribution)
    cols = {"true_eig": spectrum_report(prior)}
    for N in opts["N"]:
        ens = draw_sketch(dist, prior, "precision", N, opts["seed"], "lambda")
        cols[f"eig_N{N}"] = spectrum_report(ens)
    k = opts["top_k"] or prior.dim
    out = Path(out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "spectrum.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", *cols])
        for i in range(k):
            w.writerow([i + 1, *(_g17(c[i]) for c in cols.values())])
    return EXIT_OK


def cmd_bounds(cfg, out=None):
    """Run one bound check and write bounds.csv; exit 2 when it fails."""
    o = cfg.bounds_options()
    dist = SketchDistribution(cfg.sketch_distribution)
    bid = o["id"]
    if bid == "mean":
        rep = check_mean_concentration(ScaledIdentityCovariance(o["dim"], o["variance"]), dist,
                                       o["beta"], o["N"], o["R"], o["seed"])
    elif bid == "outer":
        rep = check_outer_product_concentration(ScaledIdentityCovariance(o["dim"], o["variance"]),
                                                dist, o["moment"], o["beta"], o["N"], o["R"], o["seed"])
    elif bid == "triple":
        rep = check_triple_product_tail(o["betas"], o["R"], o["seed"], N_grid=o["N"],
                                        mean_beta=o["beta"])
    elif bid == "perturb":
        p, _ = make_random_linear(o["n"], o["k"], seed=o["seed"], a_scale=0.5, cond=3.0)
        plan = RandomizationPlan(N=o["N"][-1], seed=o["seed"], distribution=dist,
                                 randomize_sigma=True, randomize_eps=True,
                                 randomize_delta=True, randomize_lambda=True)
        rep = check_linear_perturbation_bound(p, plan, o["R"])
    else:
        raise ConfigError(f"unknown bound id {bid!r}")
    out = Path(out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_reports_csv([rep], out / "bounds.csv")
    return EXIT_OK if rep.ok else EXIT_FLAGGED


def _apply_overrides(cfg, args):
    if getattr(args, "seeds", None):
        cfg = replace(cfg, seeds=[int(s) for s in args.seeds.split(",") if s.strip()])
    if getattr(args, "budget_secs", None) is not None:
        if args.budget_secs <= 0:
            raise ConfigError("--budget-secs must be positive")
        cfg = replace(cfg, budget_secs=float(args.budget_secs))
    if getattr(args, "threads", None) is not None:
        cfg = replace(cfg, threads=int(args.threads))
    return cfg


def build_parser():
    parser = argparse.ArgumentParser(prog="randinv", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "spectrum", "bounds"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="configuration file")
        sp.add_argument("--out", help="output directory (overrides [run] out)")
        sp.add_argument("--seeds", help="comma-separated randomization seeds")
        sp.add_argument("--budget-secs", type=int, dest="budget_secs")
        sp.add_argument("--threads", type=int)
    tp = sub.add_parser("table")
    tp.add_argument("results", nargs="?", help="results.csv (default: <out>/results.csv)")
    tp.add_argument("--config")
    tp.add_argument("--out", help="write the table to this file as well")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "table":
            path = args.results
            if path is None:
                if not args.config:
                    raise ConfigError("table needs a results file or --config")
                path = str(Path(load_config(args.config).out) / "results.csv")
            text = cmd_table(read_results(path))
            if args.out:
                Path(args.out).write_text(text, encoding="utf-8")
            sys.stdout.write(text)
            return EXIT_OK
        cfg = _apply_overrides(load_config(args.config), args)
        if args.command == "run":
            return cmd_run(cfg, out=args.out, log=lambda s: print(s, file=sys.stderr))
        if args.command == "spectrum":
            return cmd_spectrum(cfg, out=args.out)
        return cmd_bounds(cfg, out=args.out)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"randinv: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
