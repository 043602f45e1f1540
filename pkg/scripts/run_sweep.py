"""Desk-scale reproduction of the mountain-car or cart-pole sweep, with plots.

    python scripts/run_sweep.py --task mountain-car --out results/mc
    python scripts/run_sweep.py --task cart-pole --out results/cp --full
"""
import argparse
import time

from dscem import bench


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--task", choices=["mountain-car", "cart-pole"], required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--full", action="store_true", help="100 runs per cell and a 10^4-sample baseline")
    p.add_argument("--runs", type=int)
    p.add_argument("--sizes", type=int, nargs="+")
    p.add_argument("--no-baseline", action="store_true")
    p.add_argument("--workers", type=int, default=1)
    args = p.parse_args()

    changes = {"task": args.task}
    if args.runs:
        changes["runs"] = args.runs
    if args.sizes:
        changes["sizes"] = tuple(args.sizes)
    if not args.no_baseline:
        changes["methods"] = bench.ExperimentPlan().methods + ("icem-baseline",)
    plan = bench.ExperimentPlan.preset("full" if args.full else "desk", **changes)

    t0 = time.perf_counter()

    def progress(m, n, cell):
        print(f"{m:>14} N={n:<5} done after {time.perf_counter() - t0:7.1f}s", flush=True)

    bench.run_experiment(plan, args.out, workers=args.workers, progress=progress)
    for a in bench.read_aggregate(f"{args.out}/aggregate.csv"):
        print(f"{a.method:>14} N={a.N:<5} {a.metric:>15} median {a.median:10.4g} IQR [{a.q25:.4g}, {a.q75:.4g}]")
    for f in bench.plot_dir(args.out):
        print(f)


if __name__ == "__main__":
    main()
