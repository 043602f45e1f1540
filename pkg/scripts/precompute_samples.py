"""Optimize every sample set a desk or full sweep needs, ahead of time.

    python scripts/precompute_samples.py --task cart-pole --sizes 20 50 100 300
"""
import argparse
import time

from dscem import bench
from dscem.cache import SampleCache


def needed_keys(plan: bench.ExperimentPlan) -> list[tuple[int, int]]:
    dim = plan.task_spec().flat_dim
    keys = []
    for method, n in plan.cells():
        cfg = plan.cem_config(method, n)
        if cfg.sampler.random:
            continue
        set_dim = dim * cfg.n_iter if cfg.sampler.joint else dim
        keys += [(set_dim, cfg.fresh_count(j)) for j in range(cfg.n_iter)]
    return sorted(set(keys), key=lambda k: k[0] * k[1])


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--task", default="mountain-car")
    p.add_argument("--sizes", type=int, nargs="+", default=[20, 50, 100, 300])
    p.add_argument("--cache", help="cache directory (default: DSCEM_CACHE_DIR or ~/.cache/dscem)")
    args = p.parse_args()
    plan = bench.ExperimentPlan(task=args.task, sizes=tuple(args.sizes))
    cache = SampleCache(args.cache)
    for d, n in needed_keys(plan):
        t0 = time.perf_counter()
        s = cache.get(d, n)
        print(f"d={d:4d} N={n:4d} {s.status:9s} |grad|={s.grad_norm:.2e} {time.perf_counter() - t0:7.1f}s", flush=True)


if __name__ == "__main__":
    main()
