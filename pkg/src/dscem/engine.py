"""Cross-entropy method optimizer and receding-horizon MPC step.

The candidate pool of every iteration holds ``N_j - n_keep`` fresh samples
followed by ``n_keep = floor(elite_carry_fraction * K)`` re-injected
sequences: the time-shifted elites of the previous MPC step at iteration 0,
the previous iteration's best elites afterwards.  When nothing is available
to re-inject (first MPC step, or a standalone optimization) the slots hold
copies of the proposal mean, so every iteration evaluates exactly ``N_j``
sequences for every sampler.
"""
from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import plants
from .cache import SampleCache
from .lcd import SampleSet
from .proposal import (
    NoiseColorSpec,
    ProposalParams,
    VarietyScheme,
    colored_correlation,
    initial_params,
    next_candidates,
    random_rotation,
    transform_samples,
    update_m1,
    update_m2,
)


class Adaptation(str, enum.Enum):
    M1 = "var"  # fixed correlation, adaptive variances
    M2 = "cov"  # adaptive full covariance


@dataclass(frozen=True)
class SamplerSpec:
    """``random`` is the iCEM baseline (colored Gaussian noise); otherwise deterministic."""

    random: bool = True
    scheme: VarietyScheme | None = None
    adapt: Adaptation = Adaptation.M1

    def __post_init__(self):
        object.__setattr__(self, "adapt", Adaptation(self.adapt))
        if self.scheme is not None:
            object.__setattr__(self, "scheme", VarietyScheme(self.scheme))
        if not self.random and self.scheme is None:
            raise ValueError("deterministic sampling needs a variety scheme")

    @classmethod
    def parse(cls, name: str) -> "SamplerSpec":
        """``icem`` / ``icem-baseline`` or ``dscem-{var,cov}-v{1,2,3}``."""
        if name in ("icem", "icem-baseline"):
            return cls(random=True)
        m = re.fullmatch(r"dscem-(var|cov)-(v[123])", name)
        if not m:
            raise ValueError(f"unknown method {name!r}")
        return cls(random=False, scheme=VarietyScheme(m.group(2)), adapt=Adaptation(m.group(1)))

    @property
    def joint(self) -> bool:
        return self.scheme in (VarietyScheme.V2, VarietyScheme.V3)


@dataclass(frozen=True)
class CemConfig:
    n_samples: int
    n_elite: int
    n_iter: int
    momentum: float = 0.1
    elite_carry_fraction: float = 0.3
    decay: float = 1.0
    sampler: SamplerSpec = field(default_factory=SamplerSpec)
    u_init: float = 0.0
    sigma_momentum: str = "std"

    def __post_init__(self):
        if self.n_iter < 1:
            raise ValueError("at least one iteration required")
        if not 1 <= self.n_elite <= self.n_samples:
            raise ValueError("need 1 <= n_elite <= n_samples")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if not 0.0 <= self.elite_carry_fraction <= 1.0:
            raise ValueError("elite_carry_fraction must lie in [0, 1]")
        if self.decay < 1.0:
            raise ValueError("decay factor must be >= 1")
        if self.sampler.joint and self.decay != 1.0:
            raise ValueError("joint deterministic sets (V2/V3) need a constant sample count; set decay = 1")
        if self.sampler.adapt is Adaptation.M1 and self.n_elite < 2:
            raise ValueError("variance adaptation needs at least two elites")

    @property
    def n_keep(self) -> int:
        return math.floor(self.elite_carry_fraction * self.n_elite)

    def check_dim(self, dim: int) -> None:
        if self.sampler.adapt is Adaptation.M2 and self.n_elite < dim + 1:
            raise ValueError(f"full-covariance adaptation needs n_elite >= D + 1 = {dim + 1}")

    def fresh_count(self, j: int) -> int:
        return decayed_count(self.n_samples, self.decay, j, self.n_elite) - self.n_keep


@dataclass(frozen=True)
class EliteSet:
    sequences: np.ndarray  # K x D, best first
    costs: np.ndarray  # ascending
    indices: np.ndarray  # rows in the candidate pool


def decayed_count(n: int, eta: float, j: int, k: int) -> int:
    if eta < 1:
        raise ValueError("decay factor must be >= 1")
    return int(math.floor(max(n / eta**j, 2 * k)))


def select_elite(candidates, costs, k: int) -> EliteSet:
    """The ``k`` lowest costs; ties go to the lower index, NaN ranks last."""
    candidates = np.asarray(candidates)
    costs = np.asarray(costs, dtype=float)
    if k > costs.shape[0]:
        raise ValueError(f"cannot select {k} elites from {costs.shape[0]} candidates")
    order = np.argsort(costs, kind="stable")[:k]
    return EliteSet(candidates[order], costs[order], order)


def shift_sequence(seq, u_init=0.0, control_dim: int = 1) -> np.ndarray:
    """Drop the first control and append ``u_init`` (works on flat or H x d_u input)."""
    seq = np.asarray(seq, dtype=float)
    flat = seq.ndim == 1 or (seq.ndim == 2 and seq.shape[-1] != control_dim)
    arr = seq.reshape(*seq.shape[:-1], -1, control_dim) if flat else seq
    tail = np.broadcast_to(np.asarray(u_init, dtype=float), arr[..., :1, :].shape)
    out = np.concatenate([arr[..., 1:, :], tail], axis=-2)
    return out.reshape(seq.shape)


# -- candidate generation ---------------------------------------------------------


class CandidateSource:
    """Produces unit-Gaussian points and candidates for one sampler configuration."""

    def __init__(self, config: CemConfig, dim: int, samples: SampleCache | None = None):
        self.config = config
        self.dim = dim
        spec = config.sampler
        self._sets: dict[int, SampleSet] = {}
        if not spec.random:
            cache = samples if samples is not None else SampleCache()
            set_dim = dim * config.n_iter if spec.joint else dim
            for j in range(config.n_iter):
                n = config.fresh_count(j)
                if n not in self._sets:
                    self._sets[n] = cache.get(set_dim, n)

    def begin_step(self, rng: np.random.Generator) -> np.ndarray | None:
        if self.config.sampler.scheme is VarietyScheme.V3:
            return random_rotation(self.dim, rng)
        return None

    def candidates(self, j: int, params: ProposalParams, rng: np.random.Generator,
                   step_rotation=None) -> np.ndarray:
        n = self.config.fresh_count(j)
        if n <= 0:
            return np.empty((0, self.dim))
        spec = self.config.sampler
        if spec.random:
            return transform_samples(rng.standard_normal((n, self.dim)), params)
        return next_candidates(spec.scheme, j, params, self._sets[n], rng, step_rotation)


# -- CEM iterations ---------------------------------------------------------------


@dataclass(frozen=True)
class IterationTrace:
    best_cost: float
    mean_elite_cost: float
    n_evaluated: int
    mean: np.ndarray
    std: np.ndarray


@dataclass(frozen=True)
class CemResult:
    best: np.ndarray
    best_cost: float
    elites: EliteSet
    params: ProposalParams
    trace: list[IterationTrace]

    @property
    def evaluations(self) -> int:
        return sum(t.n_evaluated for t in self.trace)


def _run_iterations(cost_fn, config: CemConfig, params: ProposalParams, source: CandidateSource,
                    rng, carried, clip, sigma_floor, step_rotation) -> CemResult:
    k, keep = config.n_elite, config.n_keep
    lo, hi = clip if clip is not None else (None, None)
    trace = []
    elite = None
    for j in range(config.n_iter):
        fresh = source.candidates(j, params, rng, step_rotation)
        if j == 0:
            reused = carried[:keep] if carried is not None else np.empty((0, params.dim))
            if reused.shape[0] < keep:
                fill = np.repeat(params.mean[None], keep - reused.shape[0], axis=0)
                reused = np.vstack([reused, fill])
        else:
            reused = elite.sequences[:keep]
        pool = np.vstack([fresh, reused])
        if lo is not None:
            pool = np.clip(pool, lo, hi)
        with np.errstate(all="ignore"):
            costs = np.asarray(cost_fn(pool), dtype=float)
        costs = np.where(np.isnan(costs), np.nan, np.where(np.isfinite(costs), costs, np.inf))
        if not np.any(np.isfinite(costs)):
            raise FloatingPointError(f"all {costs.size} candidate costs are non-finite in iteration {j}")
        elite = select_elite(pool, costs, k)
        if config.sampler.adapt is Adaptation.M1:
            params = update_m1(params, elite.sequences, config.momentum, sigma_floor, config.sigma_momentum)
        else:
            params = update_m2(params, elite.sequences, config.momentum)
        trace.append(IterationTrace(float(elite.costs[0]), float(np.mean(elite.costs)), pool.shape[0],
                                    params.mean.copy(), np.sqrt(np.diag(params.covariance()))))
    return CemResult(elite.sequences[0].copy(), float(elite.costs[0]), elite, params, trace)


def cem_optimize(cost_fn: Callable, config: CemConfig, params: ProposalParams,
                 rng: np.random.Generator | None = None, samples: SampleCache | None = None,
                 bounds=None) -> CemResult:
    """Minimize ``cost_fn`` (batched: ``(n, D) -> (n,)``) by the cross-entropy method.

    Returns the best member of the final elite set.  ``bounds`` optionally
    clips candidates to a ``(lower, upper)`` box.
    """
    rng = rng if rng is not None else np.random.default_rng()
    config.check_dim(params.dim)
    source = CandidateSource(config, params.dim, samples)
    floor = _sigma_floor(params)
    return _run_iterations(cost_fn, config, params, source, rng, None, bounds, floor,
                           source.begin_step(rng))


def _sigma_floor(params: ProposalParams) -> np.ndarray:
    return 1e-6 * np.sqrt(np.diag(params.covariance()))


# -- MPC --------------------------------------------------------------------------


@dataclass(frozen=True)
class MpcState:
    proposal: ProposalParams
    carried: np.ndarray  # shifted elites from the previous step, possibly empty
    step: int = 0


@dataclass(frozen=True)
class StepTrace:
    best_cost: float
    evaluations: int
    iterations: list[IterationTrace]


class CemMpc:
    """CEM-MPC controller for one task and configuration.

    The proposal of every step starts from the shifted final mean of the
    previous step and the task's initial covariance.
    """

    def __init__(self, task: plants.TaskSpec, config: CemConfig, samples: SampleCache | None = None):
        self.task = task
        self.config = config
        dim = task.flat_dim
        config.check_dim(dim)
        corr = colored_correlation(NoiseColorSpec(task.beta, task.horizon, task.control_dim))
        self.initial = initial_params(dim, task.sigma0, corr, full=config.sampler.adapt is Adaptation.M2)
        self.sigma_floor = _sigma_floor(self.initial)
        self.source = CandidateSource(config, dim, samples)
        lo = np.tile(np.asarray(task.u_min), task.horizon)
        hi = np.tile(np.asarray(task.u_max), task.horizon)
        self.bounds = (lo, hi)

    def initial_state(self) -> MpcState:
        return MpcState(self.initial, np.empty((0, self.task.flat_dim)), 0)

    def step(self, state: MpcState, x, rng: np.random.Generator):
        task, config = self.task, self.config
        rotation = self.source.begin_step(rng)
        res = _run_iterations(lambda y: plants.rollout_costs(x, y, task), config, state.proposal,
                              self.source, rng, state.carried, self.bounds, self.sigma_floor, rotation)
        u = res.best[: task.control_dim].copy()
        mean = shift_sequence(res.params.mean, config.u_init, task.control_dim)
        proposal = ProposalParams(mean, self.initial.cov_model)
        carried = shift_sequence(res.elites.sequences[: config.n_keep], config.u_init, task.control_dim)
        nxt = MpcState(proposal, carried, state.step + 1)
        return u, nxt, StepTrace(res.best_cost, res.evaluations, res.trace)


def mpc_step(state: MpcState, x, task: plants.TaskSpec, config: CemConfig,
             rng: np.random.Generator, samples: SampleCache | None = None, controller: CemMpc | None = None):
    """One receding-horizon step; returns ``(u, next_state, trace)``."""
    controller = controller or CemMpc(task, config, samples)
    return controller.step(state, x, rng)


def run_episode(task: plants.TaskSpec, config: CemConfig, env_seed: int, ctrl_seed: int,
                samples: SampleCache | None = None, controller: CemMpc | None = None) -> plants.RunRecord:
    """Closed-loop run of ``task.steps`` steps with process noise.

    The environment generator (initial state, process noise) and the
    controller generator are seeded independently.
    """
    controller = controller or CemMpc(task, config, samples)
    env = np.random.default_rng(env_seed)
    ctrl = np.random.default_rng(ctrl_seed)
    x = plants.sample_initial_state(task, env)
    state = controller.initial_state()
    states = [x]
    controls, stage = [], []
    evaluations = 0
    for _ in range(task.steps):
        u, state, tr = controller.step(state, x, ctrl)
        evaluations += tr.evaluations
        controls.append(u)
        stage.append(float(plants.stage_cost(x, u, task)))
        x = plants.simulate_step(x, u, task, env)
        states.append(x)
    states = np.array(states)
    return plants.RunRecord(states, np.array(controls), np.array(stage),
                            plants.is_success(task, states), evaluations)
