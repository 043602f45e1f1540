"""Command line entry point: ``dscem {bench,samples,task,correlation} ...``.

Exit codes: 0 success, 1 other failure, 2 configuration error, 3 sample-cache error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench, plants
from .cache import CacheError, SampleCache, SampleCacheKey, decode, save_cache
from .lcd import OptimizerConfig, cvm_distance, optimize_samples
from .proposal import NoiseColorSpec, colored_correlation

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_CACHE = 0, 1, 2, 3


class ConfigError(Exception):
    pass


def _bench_run(args) -> int:
    preset = "full" if args.full else "desk"
    changes = {"task": args.task, "runs": args.runs, "base_seed": args.seed, "steps": args.steps}
    try:
        if args.plan:
            plan = bench.ExperimentPlan.load(args.plan, preset, **changes)
        else:
            plan = bench.ExperimentPlan.preset(preset, **{k: v for k, v in changes.items() if v is not None})
    except (OSError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    cache = SampleCache(strict=args.strict_cache)

    def progress(m, n, cell):
        costs = [o.row.cumulative_cost for o in cell]
        print(f"{m:>14} N={n:<5} runs={len(cell)} median cost={np.median(costs):.4g}", flush=True)

    bench.run_experiment(plan, args.out, cache, workers=args.workers, progress=progress)
    print(f"wrote {Path(args.out) / 'runs.csv'}")
    return EXIT_OK


def _bench_aggregate(args) -> int:
    rows = bench.aggregate_dir(args.dir)
    for r in rows:
        print(f"{r.method:>14} N={r.N:<5} {r.metric:>15}: median {r.median:.4g} "
              f"[{r.q25:.4g}, {r.q75:.4g}] fail {r.failures}/{r.count}")
    return EXIT_OK


def _bench_plot(args) -> int:
    out = Path(args.dir)
    aggs = bench.read_aggregate(out / "aggregate.csv")
    if args.methods is not None:
        keep = {bench.canonical_method(m) for m in args.methods}
        aggs = [a for a in aggs if a.method in keep]
    if not aggs:
        print("no aggregates to plot", file=sys.stderr)
        return EXIT_FAIL
    for f in bench.plot_summary(aggs, out / "plots", out / "traces"):
        print(f)
    return EXIT_OK


def _samples_generate(args) -> int:
    cfg = OptimizerConfig(restarts=args.restarts, seed=args.seed, max_iter=args.max_iter)
    s = optimize_samples(args.dim, args.count, cfg)
    out = Path(args.out)
    if out.is_dir():
        out = out / SampleCacheKey(args.dim, args.count).filename
    save_cache(s, out)
    print(f"{out}: d={s.dim} N={s.count} cvm={s.cvm_score:.10g} status={s.status} grad={s.grad_norm:.3e}")
    return EXIT_OK


def _samples_inspect(args) -> int:
    s = decode(Path(args.path).read_bytes())
    p = s.points
    cov = np.atleast_2d(np.cov(p, rowvar=False, bias=True))
    off = cov - np.diag(np.diag(cov))
    print(f"dim          {s.dim}")
    print(f"count        {s.count}")
    print(f"scheme       {s.scheme.value}")
    print(f"status       {s.status}")
    print(f"cvm_score    {'n/a' if s.cvm_score is None else f'{s.cvm_score:.10g}'}")
    print(f"grad_norm    {s.grad_norm:.3e}")
    print(f"max |mean|   {np.abs(p.mean(axis=0)).max():.3e}")
    print(f"var range    [{np.diag(cov).min():.4f}, {np.diag(cov).max():.4f}]")
    print(f"max |cov_ij| {np.abs(off).max():.4f}")
    if args.recompute:
        print(f"cvm (recomputed) {cvm_distance(s):.10g}")
    return EXIT_OK


def _task_dump(args) -> int:
    spec = plants.TASKS[args.name]
    if args.out:
        spec.save(args.out)
    else:
        sys.stdout.write(spec.to_toml())
    return EXIT_OK


def _correlation(args) -> int:
    corr = colored_correlation(NoiseColorSpec(args.beta, args.horizon, args.control_dim))
    np.savetxt(args.out, corr, delimiter=",", fmt="%.17g")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dscem", description="Deterministic-sample CEM for MPC")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    b = sub.add_parser("bench", help="benchmark sweeps").add_subparsers(dest="bench_cmd", required=True)
    r = b.add_parser("run", help="run a sweep")
    r.add_argument("--task", choices=sorted(plants.TASKS))
    r.add_argument("--plan", help="TOML plan file")
    r.add_argument("--out", required=True)
    scale = r.add_mutually_exclusive_group()
    scale.add_argument("--desk", action="store_true", help="20 runs, baseline N=2000 (default)")
    scale.add_argument("--full", action="store_true", help="100 runs, baseline N=10000")
    r.add_argument("--strict-cache", action="store_true", help="fail instead of optimizing missing sets")
    r.add_argument("--runs", type=int)
    r.add_argument("--seed", type=int, help="base seed")
    r.add_argument("--steps", type=int, help="override episode length")
    r.add_argument("--workers", type=int, default=1)
    r.set_defaults(func=_bench_run)
    a = b.add_parser("aggregate", help="recompute aggregate.csv from runs.csv")
    a.add_argument("dir")
    a.set_defaults(func=_bench_aggregate)
    pl = b.add_parser("plot", help="summary figures")
    pl.add_argument("dir")
    pl.add_argument("--methods", nargs="*")
    pl.set_defaults(func=_bench_plot)

    s = sub.add_parser("samples", help="deterministic sample sets").add_subparsers(dest="samples_cmd", required=True)
    g = s.add_parser("generate")
    g.add_argument("--dim", type=int, required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--out", required=True, help="file or directory")
    g.add_argument("--restarts", type=int, default=3)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--max-iter", type=int, default=5000)
    g.set_defaults(func=_samples_generate)
    i = s.add_parser("inspect")
    i.add_argument("path")
    i.add_argument("--recompute", action="store_true", help="recompute the distance from the points")
    i.set_defaults(func=_samples_inspect)

    t = sub.add_parser("task", help="write a task specification")
    t.add_argument("name", choices=sorted(plants.TASKS))
    t.add_argument("--out")
    t.set_defaults(func=_task_dump)

    c = sub.add_parser("correlation", help="dump a colored-noise correlation matrix as CSV")
    c.add_argument("--beta", type=float, required=True)
    c.add_argument("--horizon", type=int, required=True)
    c.add_argument("--control-dim", type=int, default=1)
    c.add_argument("--out", required=True)
    c.set_defaults(func=_correlation)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CacheError as exc:
        print(f"cache error: {exc}", file=sys.stderr)
        return EXIT_CACHE
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG if args.cmd == "bench" else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
