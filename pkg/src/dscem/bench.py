"""Seeded benchmark sweeps, aggregation and summary plots.

Output directory layout::

    plan.toml        resolved plan
    task.toml        resolved task specification
    runs.csv         one row per run, deterministic
    timings.csv      wall time per run (kept apart so runs.csv is reproducible)
    aggregate.csv    median / quartiles per (method, N, metric)
    traces/          per-cell arrays of stage costs, controls and states
"""
from __future__ import annotations

import csv
import dataclasses
import logging
import math
import time
import warnings
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import plants
from .cache import SampleCache
from .engine import Adaptation, CemConfig, CemMpc, SamplerSpec, run_episode

log = logging.getLogger(__name__)

RUNS_SCHEMA = "dscem-runs v1"
AGG_SCHEMA = "dscem-aggregate v1"
QUANTILE_NOTE = "quantiles: linear interpolation between order statistics (numpy 'linear') over finite values"
RUN_COLUMNS = ["method", "N", "run", "env_seed", "ctrl_seed", "cumulative_cost", "smoothness", "success", "rollouts"]
AGG_COLUMNS = ["method", "N", "metric", "median", "q25", "q75", "count", "failures", "failure_rate"]
METRICS = ("cumulative_cost", "smoothness")

METHODS = ("icem", "dscem-var-v1", "dscem-var-v2", "dscem-var-v3", "dscem-cov-v1", "dscem-cov-v2",
           "dscem-cov-v3", "icem-baseline")
METHOD_ALIASES = {"icem-baseline-10k": "icem-baseline"}
COV_MIN_SAMPLES = 40
CONVERGENCE_N = 50

_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"]
COLORS = dict(zip(METHODS, _PALETTE))


def canonical_method(name: str) -> str:
    name = METHOD_ALIASES.get(name, name)
    if name not in METHODS:
        raise ValueError(f"unknown method {name!r}; choose from {', '.join(METHODS)}")
    return name


@dataclass(frozen=True)
class ExperimentPlan:
    task: str = "mountain-car"
    methods: tuple = ("icem", "dscem-var-v1", "dscem-var-v2", "dscem-var-v3", "dscem-cov-v3")
    sizes: tuple = (20, 50, 100, 300)
    runs: int = 20
    base_seed: int = 0
    baseline_n: int = 2000
    n_iter: int = 3
    n_elite: int = 10
    n_elite_cov: int = 40
    momentum: float = 0.1
    elite_carry_fraction: float = 0.3
    steps: int | None = None  # override of the task's episode length
    task_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(canonical_method(m) for m in self.methods))
        object.__setattr__(self, "sizes", tuple(int(n) for n in self.sizes))
        if self.task not in plants.TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if not self.methods:
            raise ValueError("plan lists no methods")
        if self.runs < 1 or any(n < 1 for n in self.sizes) or self.baseline_n < 1:
            raise ValueError("runs and sample sizes must be positive")
        if len(set(self.methods)) != len(self.methods) or len(set(self.sizes)) != len(self.sizes):
            raise ValueError("methods and sizes must not repeat")

    @classmethod
    def preset(cls, name: str, **changes) -> "ExperimentPlan":
        """``desk`` (20 runs, baseline N = 2000) or ``full`` (100 runs, baseline N = 10000)."""
        base = {"desk": {}, "full": {"runs": 100, "baseline_n": 10_000}}[name]
        return cls(**{**base, **changes})

    @classmethod
    def from_dict(cls, data: dict, preset: str = "desk") -> "ExperimentPlan":
        data = dict(data)
        overrides = data.pop("task_overrides", data.pop("overrides", {}))
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown plan keys: {sorted(unknown)}")
        for key in ("methods", "sizes"):
            if key in data:
                data[key] = tuple(data[key])
        return cls.preset(preset, task_overrides=dict(overrides), **data)

    @classmethod
    def load(cls, path, preset: str = "desk", **changes) -> "ExperimentPlan":
        data = plants.toml_loads(Path(path).read_text())
        data.update({k: v for k, v in changes.items() if v is not None})
        return cls.from_dict(data, preset)

    def to_toml(self) -> str:
        out = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name == "task_overrides" or v is None:
                continue
            if isinstance(v, tuple):
                v = "[" + ", ".join(f'"{x}"' if isinstance(x, str) else repr(x) for x in v) + "]"
            elif isinstance(v, str):
                v = f'"{v}"'
            else:
                v = repr(v)
            out.append(f"{f.name} = {v}")
        if self.task_overrides:
            out.append("\n[task_overrides]")
            for k, v in self.task_overrides.items():
                out.append(f"{k} = {list(v) if isinstance(v, tuple) else v!r}")
        return "\n".join(out) + "\n"

    def task_spec(self) -> plants.TaskSpec:
        changes = {k: tuple(v) if isinstance(v, list) else v for k, v in self.task_overrides.items()}
        if self.steps is not None:
            changes["steps"] = self.steps
        return plants.TASKS[self.task].replace(**changes)

    def sizes_for(self, method: str) -> tuple:
        if method == "icem-baseline":
            return (self.baseline_n,)
        if method.startswith("dscem-cov"):
            kept = tuple(n for n in self.sizes if n >= COV_MIN_SAMPLES)
            if len(kept) < len(self.sizes):
                log.info("%s skips sizes below %d", method, COV_MIN_SAMPLES)
            return kept
        return self.sizes

    def cells(self) -> list[tuple[str, int]]:
        return [(m, n) for m in self.methods for n in self.sizes_for(m)]

    def cem_config(self, method: str, n: int) -> CemConfig:
        spec = SamplerSpec.parse(method)
        k = self.n_elite_cov if spec.adapt is Adaptation.M2 else self.n_elite
        return CemConfig(n_samples=n, n_elite=k, n_iter=self.n_iter, momentum=self.momentum,
                         elite_carry_fraction=self.elite_carry_fraction, sampler=spec)


def env_seed(base_seed: int, run: int) -> int:
    """Environment seed: shared by every method and sample size for the same run index."""
    return int(np.random.SeedSequence([base_seed, 0x0E17, run]).generate_state(1, np.uint64)[0] >> 1)


def ctrl_seed(base_seed: int, method: str, n: int, run: int) -> int:
    tag = zlib.crc32(method.encode())
    return int(np.random.SeedSequence([base_seed, 0xC7A1, tag, n, run]).generate_state(1, np.uint64)[0] >> 1)


@dataclass(frozen=True)
class RunRow:
    method: str
    N: int
    run: int
    env_seed: int
    ctrl_seed: int
    cumulative_cost: float
    smoothness: float
    success: bool
    rollouts: int

    def as_strings(self) -> list[str]:
        return [self.method, str(self.N), str(self.run), str(self.env_seed), str(self.ctrl_seed),
                _fmt(self.cumulative_cost), _fmt(self.smoothness), str(int(self.success)), str(self.rollouts)]

    @classmethod
    def parse(cls, rec: dict) -> "RunRow":
        return cls(rec["method"], int(rec["N"]), int(rec["run"]), int(rec["env_seed"]), int(rec["ctrl_seed"]),
                   float(rec["cumulative_cost"]), float(rec["smoothness"]), rec["success"] == "1",
                   int(rec["rollouts"]))


def _fmt(x: float) -> str:
    return f"{x:.17g}"


@dataclass(frozen=True)
class RunOutput:
    row: RunRow
    record: plants.RunRecord
    wall: float


def run_one(plan: ExperimentPlan, method: str, n: int, run: int, cache: SampleCache | None = None,
            controller: CemMpc | None = None) -> RunOutput:
    """One closed-loop episode of cell ``(method, n)``; pure given the plan and run index."""
    task = plan.task_spec()
    config = plan.cem_config(method, n)
    es, cs = env_seed(plan.base_seed, run), ctrl_seed(plan.base_seed, method, n, run)
    t0 = time.perf_counter()
    rec = run_episode(task, config, es, cs, cache, controller)
    wall = time.perf_counter() - t0
    cost = rec.cumulative_cost
    row = RunRow(method, n, run, es, cs, cost if math.isfinite(cost) else math.inf, rec.smoothness,
                 rec.success, rec.rollouts)
    return RunOutput(row, rec, wall)


def run_cell(plan: ExperimentPlan, method: str, n: int, cache: SampleCache | None = None,
             runs=None) -> list[RunOutput]:
    cache = cache if cache is not None else SampleCache()
    controller = CemMpc(plan.task_spec(), plan.cem_config(method, n), cache)
    return [run_one(plan, method, n, r, cache, controller) for r in (runs if runs is not None else range(plan.runs))]


def _cell_job(args):
    plan, method, n, root, strict = args
    return run_cell(plan, method, n, SampleCache(root, strict=strict))


def prepare_samples(plan: ExperimentPlan, cache: SampleCache) -> None:
    """Load (or generate) every sample set the plan needs before any run starts."""
    dim = plan.task_spec().flat_dim
    for method, n in plan.cells():
        config = plan.cem_config(method, n)
        if config.sampler.random:
            continue
        config.check_dim(dim)
        set_dim = dim * config.n_iter if config.sampler.joint else dim
        for j in range(config.n_iter):
            cache.get(set_dim, config.fresh_count(j))


def run_experiment(plan: ExperimentPlan, out_dir, cache: SampleCache | None = None, workers: int = 1,
                   progress=None) -> list[RunRow]:
    """Run every cell of ``plan`` and write runs, timings, traces and aggregates to ``out_dir``.

    Rows are written in (method, N, run) order whatever the completion order.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cache = cache if cache is not None else SampleCache()
    prepare_samples(plan, cache)
    (out / "plan.toml").write_text(plan.to_toml())
    plan.task_spec().save(out / "task.toml")
    cells = plan.cells()
    if workers > 1:
        jobs = [(plan, m, n, cache.root, cache.strict) for m, n in cells]
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_cell_job, jobs))
    else:
        results = []
        for m, n in cells:
            results.append(run_cell(plan, m, n, cache))
            if progress:
                progress(m, n, results[-1])
    rows = [o.row for cell in results for o in cell]
    write_runs(out / "runs.csv", rows)
    with open(out / "timings.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "N", "run", "wall_s"])
        for cell in results:
            for o in cell:
                w.writerow([o.row.method, o.row.N, o.row.run, f"{o.wall:.6f}"])
    traces = out / "traces"
    traces.mkdir(exist_ok=True)
    for (m, n), cell in zip(cells, results):
        np.savez_compressed(traces / f"{m}_N{n}.npz",
                            stage_costs=np.stack([o.record.stage_costs for o in cell]),
                            controls=np.stack([o.record.controls for o in cell]),
                            states=np.stack([o.record.states for o in cell]))
    write_aggregate(out / "aggregate.csv", aggregate(rows))
    return rows


def write_runs(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# {RUNS_SCHEMA}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RUN_COLUMNS)
        for r in rows:
            w.writerow(r.as_strings())


def _read_csv(path, schema: str) -> list[dict]:
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if not first.startswith(f"# {schema.split()[0]}"):
            raise ValueError(f"{path} is not a {schema} file")
        if first.split()[1:3] != schema.split():
            raise ValueError(f"{path}: unsupported schema {first[2:]!r}")
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def read_runs(path) -> list[RunRow]:
    return [RunRow.parse(r) for r in _read_csv(path, RUNS_SCHEMA)]


# -- aggregation -------------------------------------------------------------------


@dataclass(frozen=True)
class AggregateRow:
    method: str
    N: int
    metric: str
    median: float
    q25: float
    q75: float
    count: int
    failures: int

    @property
    def failure_rate(self) -> float:
        return self.failures / self.count

    def as_strings(self) -> list[str]:
        return [self.method, str(self.N), self.metric, _fmt(self.median), _fmt(self.q25), _fmt(self.q75),
                str(self.count), str(self.failures), _fmt(self.failure_rate)]


def summarize(values) -> tuple[float, float, float, int]:
    """(median, q25, q75, number of non-finite values) over the finite values."""
    v = np.asarray(values, dtype=float)
    finite = v[np.isfinite(v)]
    if finite.size == 0:
        raise ValueError("no finite values")
    q25, med, q75 = np.percentile(finite, [25, 50, 75], method="linear")
    return float(med), float(q25), float(q75), int(v.size - finite.size)


def aggregate(rows) -> list[AggregateRow]:
    """Median and interquartile range per (method, N, metric), in first-seen cell order."""
    cells: dict[tuple[str, int], list[RunRow]] = {}
    for r in rows:
        cells.setdefault((r.method, r.N), []).append(r)
    out = []
    for (m, n), cell in cells.items():
        for metric in METRICS:
            vals = [getattr(r, metric) for r in cell]
            try:
                med, q25, q75, fails = summarize(vals)
            except ValueError:
                warnings.warn(f"cell ({m}, N={n}) has no finite {metric}; omitted", stacklevel=2)
                continue
            out.append(AggregateRow(m, n, metric, med, q25, q75, len(vals), fails))
    return out


def write_aggregate(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# {AGG_SCHEMA}\n# {QUANTILE_NOTE}; non-finite values count as failures\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AGG_COLUMNS)
        for r in rows:
            w.writerow(r.as_strings())


def read_aggregate(path) -> list[AggregateRow]:
    return [AggregateRow(r["method"], int(r["N"]), r["metric"], float(r["median"]), float(r["q25"]),
                         float(r["q75"]), int(r["count"]), int(r["failures"]))
            for r in _read_csv(path, AGG_SCHEMA)]


def aggregate_dir(out_dir) -> list[AggregateRow]:
    out = Path(out_dir)
    rows = aggregate(read_runs(out / "runs.csv"))
    write_aggregate(out / "aggregate.csv", rows)
    return rows


# -- plots ---------------------------------------------------------------------------


def _write_table(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def plot_summary(aggregates, out_dir, traces_dir=None) -> list[Path]:
    """Cost and smoothness vs N, convergence at N = 50 and applied controls.

    Each figure is accompanied by a CSV of exactly the plotted numbers.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    aggregates = list(aggregates)
    if not aggregates:
        raise ValueError("nothing to plot")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    methods = list(dict.fromkeys(a.method for a in aggregates))
    files = []

    for metric, label in (("cumulative_cost", "cumulative cost"), ("smoothness", "smoothness S")):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        table = []
        for m in methods:
            pts = sorted((a for a in aggregates if a.method == m and a.metric == metric), key=lambda a: a.N)
            if not pts:
                continue
            n = [a.N for a in pts]
            ax.plot(n, [a.median for a in pts], "o-", color=COLORS[m], label=m, ms=3)
            ax.fill_between(n, [a.q25 for a in pts], [a.q75 for a in pts], color=COLORS[m], alpha=0.2)
            table += [[m, a.N, _fmt(a.median), _fmt(a.q25), _fmt(a.q75)] for a in pts]
        ax.set_xscale("log")
        ax.set_xlabel("samples N")
        ax.set_ylabel(label)
        ax.legend(fontsize=7)
        fig.tight_layout()
        files += _save(fig, out / f"{metric}_vs_n.png", plt)
        _write_table(out / f"{metric}_vs_n.csv", ["method", "N", "median", "q25", "q75"], table)
        files.append(out / f"{metric}_vs_n.csv")

    if traces_dir is not None:
        files += _trace_plots(methods, Path(traces_dir), out, plt)
    return files


def _save(fig, path, plt) -> list[Path]:
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return [path]


def _trace_plots(methods, traces: Path, out: Path, plt) -> list[Path]:
    files = []
    avail = {m: sorted(int(p.stem.rsplit("_N", 1)[1]) for p in traces.glob(f"{m}_N*.npz")) for m in methods}
    conv = {m: traces / f"{m}_N{CONVERGENCE_N}.npz" for m in methods if CONVERGENCE_N in avail[m]}
    if conv:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        table = []
        for m, p in conv.items():
            stage = np.load(p)["stage_costs"]
            q25, med, q75 = np.percentile(stage, [25, 50, 75], axis=0)
            k = np.arange(stage.shape[1])
            ax.plot(k, med, color=COLORS[m], label=m)
            ax.fill_between(k, q25, q75, color=COLORS[m], alpha=0.2)
            table += [[m, i, _fmt(a), _fmt(b), _fmt(c)] for i, a, b, c in zip(k, med, q25, q75)]
        ax.set_xlabel("time step")
        ax.set_ylabel(f"stage cost (N = {CONVERGENCE_N})")
        ax.set_yscale("symlog", linthresh=1e-3)
        ax.legend(fontsize=7)
        fig.tight_layout()
        files += _save(fig, out / "convergence.png", plt)
        _write_table(out / "convergence.csv", ["method", "step", "median", "q25", "q75"], table)
        files.append(out / "convergence.csv")

    picks = {m: (CONVERGENCE_N if CONVERGENCE_N in ns else ns[-1]) for m, ns in avail.items() if ns}
    if picks:
        fig, axes = plt.subplots(len(picks), 1, figsize=(5, 1.6 * len(picks) + 0.6), sharex=True, squeeze=False)
        table = []
        for ax, (m, n) in zip(axes[:, 0], picks.items()):
            u = np.load(traces / f"{m}_N{n}.npz")["controls"][..., 0]
            ax.plot(u.T, color=COLORS[m], alpha=0.25, lw=0.7)
            ax.set_ylabel(f"{m}\nN={n}", fontsize=7)
            table += [[m, n, r, k, _fmt(v)] for r, row in enumerate(u) for k, v in enumerate(row)]
        axes[-1, 0].set_xlabel("time step")
        fig.tight_layout()
        files += _save(fig, out / "controls.png", plt)
        _write_table(out / "controls.csv", ["method", "N", "run", "step", "u"], table)
        files.append(out / "controls.csv")
    return files


def plot_dir(out_dir) -> list[Path]:
    out = Path(out_dir)
    return plot_summary(read_aggregate(out / "aggregate.csv"), out / "plots", out / "traces")
