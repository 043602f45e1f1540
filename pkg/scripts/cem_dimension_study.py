"""Distance to the optimum of a 30-dimensional quadratic versus CEM iterations.

Shows how far a fixed budget of N = 100 samples per iteration gets within
10, 20, 40 and 80 iterations for each sampler.
"""
import argparse

import numpy as np

from dscem.cache import SampleCache
from dscem.engine import CemConfig, SamplerSpec, cem_optimize
from dscem.proposal import initial_params


def median_error(method, dim, n_iter, seeds, cache, sigma0=1.0):
    spec = SamplerSpec.parse(method)
    k = 40 if spec.adapt.value == "cov" else 10
    cfg = CemConfig(100, k, n_iter, sampler=spec)
    errs = []
    for seed in range(seeds):
        y_star = np.random.default_rng(1000 + seed).uniform(-1, 1, dim)
        params = initial_params(dim, sigma0, np.eye(dim), full=spec.adapt.value == "cov")
        res = cem_optimize(lambda y: np.sum((y - y_star) ** 2, axis=1), cfg, params, np.random.default_rng(seed), cache)
        errs.append(np.linalg.norm(res.best - y_star))
    return float(np.median(errs))


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--dim", type=int, default=30)
    p.add_argument("--iters", type=int, nargs="+", default=[10, 20, 40, 80])
    p.add_argument("--methods", nargs="+", default=["icem", "dscem-var-v1"])
    p.add_argument("--seeds", type=int, default=20)
    args = p.parse_args()
    cache = SampleCache()
    print("method".ljust(14) + "".join(f"{n:>10d}" for n in args.iters))
    for m in args.methods:
        row = [median_error(m, args.dim, n, args.seeds, cache) for n in args.iters]
        print(m.ljust(14) + "".join(f"{v:10.3f}" for v in row), flush=True)


if __name__ == "__main__":
    main()
