"""Benchmark plants, RK4 discretization, quadratic costs and run bookkeeping.

All dynamics and cost functions are vectorized over leading axes: a state
batch has shape ``(..., d_x)`` and a control batch ``(..., d_u)``.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import _kernels

try:
    import tomllib as _toml
except ImportError:  # Python < 3.11
    import tomli as _toml


def toml_loads(text: str) -> dict:
    return _toml.loads(text)


# cart-pole physical parameters
CART_MASS = 1.0
POLE_MASS = 0.1
POLE_HALF_LENGTH = 0.5
GRAVITY = 9.81


def mountain_car_deriv(state, u):
    """Continuous-time mountain car: ``(x2, -0.0025 cos(3 x1) + 0.0015 u)``."""
    state = np.asarray(state, dtype=float)
    u = np.asarray(u, dtype=float)[..., 0]
    x1, x2 = state[..., 0], state[..., 1]
    return np.stack([x2, -0.0025 * np.cos(3.0 * x1) + 0.0015 * u], axis=-1)


def cartpole_deriv(state, u):
    """Frictionless cart-pole, state ``(x, xdot, phi, phidot)`` with phi = 0 upright.

    The pole acceleration is evaluated first and substituted into the cart
    acceleration.
    """
    state = np.asarray(state, dtype=float)
    u = np.asarray(u, dtype=float)[..., 0]
    xdot, phi, phidot = state[..., 1], state[..., 2], state[..., 3]
    mp, mc, l, g = POLE_MASS, CART_MASS, POLE_HALF_LENGTH, GRAVITY
    total = mp + mc
    sin, cos = np.sin(phi), np.cos(phi)
    tmp = (u + mp * l * phidot**2 * sin) / total
    phiddot = (g * sin - cos * tmp) / (l * (4.0 / 3.0 - mp * cos**2 / total))
    xddot = (u + mp * l * (phidot**2 * sin - phiddot * cos)) / total
    return np.stack([xdot, xddot, phidot, phiddot], axis=-1)


def integrator_deriv(state, u):
    """``xdot = u``; with dt = 1 and RK4 this is exactly ``x + u``."""
    return np.broadcast_to(np.asarray(u, dtype=float), np.shape(state)).copy()


def cartpole_energy(state) -> np.ndarray:
    """Total mechanical energy of the cart-pole (uniform rod, pivot at the cart)."""
    state = np.asarray(state, dtype=float)
    xdot, phi, phidot = state[..., 1], state[..., 2], state[..., 3]
    mp, mc, l = POLE_MASS, CART_MASS, POLE_HALF_LENGTH
    kinetic = (0.5 * (mc + mp) * xdot**2 + mp * l * xdot * phidot * np.cos(phi)
               + 0.5 * (4.0 / 3.0) * mp * l**2 * phidot**2)
    return kinetic + mp * GRAVITY * l * np.cos(phi)


def rk4_step(deriv: Callable, state, u, dt: float):
    """One classical RK4 step with the control held constant (zero-order hold)."""
    state = np.asarray(state, dtype=float)
    k1 = deriv(state, u)
    k2 = deriv(state + 0.5 * dt * k1, u)
    k3 = deriv(state + 0.5 * dt * k2, u)
    k4 = deriv(state + dt * k3, u)
    return state + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _identity_features(state):
    return np.asarray(state, dtype=float)


def cartpole_features(state):
    """Augmented cost state ``(x, xdot, cos phi, sin phi, phidot)``."""
    state = np.asarray(state, dtype=float)
    phi = state[..., 2]
    return np.stack([state[..., 0], state[..., 1], np.cos(phi), np.sin(phi), state[..., 3]], axis=-1)


@dataclass(frozen=True)
class Dynamics:
    deriv: Callable
    features: Callable
    state_dim: int
    control_dim: int


DYNAMICS: dict[str, Dynamics] = {
    "mountain-car": Dynamics(mountain_car_deriv, _identity_features, 2, 1),
    "cart-pole": Dynamics(cartpole_deriv, cartpole_features, 4, 1),
    "integrator": Dynamics(integrator_deriv, _identity_features, 1, 1),
}


@dataclass(frozen=True)
class TaskSpec:
    """Plant, costs, limits, noise and controller defaults for one benchmark.

    Vector fields are tuples so the spec is hashable and serializes to a flat
    key-value file.  ``q``, ``q_terminal`` and ``goal`` live in cost-feature
    space (5-dim for the cart-pole).
    """

    dynamics: str
    dt: float
    horizon: int
    steps: int
    u_min: tuple
    u_max: tuple
    q: tuple
    r: float
    q_terminal: tuple
    goal: tuple
    noise_var: tuple
    init_low: tuple
    init_high: tuple
    beta: float
    sigma0: float

    def __post_init__(self):
        if self.dynamics not in DYNAMICS:
            raise ValueError(f"unknown dynamics {self.dynamics!r}")
        for name in ("u_min", "u_max", "q", "q_terminal", "goal", "noise_var", "init_low", "init_high"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        dyn = self.plant
        if len(self.u_min) != dyn.control_dim or len(self.u_max) != dyn.control_dim:
            raise ValueError("control limits do not match the control dimension")
        if not all(math.isfinite(v) for v in self.u_min + self.u_max):
            raise ValueError("control limits must be finite")
        if any(lo > hi for lo, hi in zip(self.u_min, self.u_max)):
            raise ValueError("u_min exceeds u_max")
        if len(self.noise_var) != dyn.state_dim or len(self.init_low) != dyn.state_dim:
            raise ValueError("noise / initial-state bounds do not match the state dimension")
        if not (len(self.q) == len(self.q_terminal) == len(self.goal)):
            raise ValueError("q, q_terminal and goal must have equal length")
        if min(self.q + self.q_terminal + self.noise_var + (self.r,)) < 0:
            raise ValueError("weights and noise variances must be nonnegative")
        if self.dt <= 0 or self.horizon < 1 or self.steps < 1 or self.sigma0 <= 0 or self.beta < 0:
            raise ValueError("dt, horizon, steps and sigma0 must be positive, beta nonnegative")

    @property
    def plant(self) -> Dynamics:
        return DYNAMICS[self.dynamics]

    @property
    def control_dim(self) -> int:
        return self.plant.control_dim

    @property
    def flat_dim(self) -> int:
        return self.control_dim * self.horizon

    def replace(self, **changes) -> "TaskSpec":
        return dataclasses.replace(self, **changes)

    # -- serialization ------------------------------------------------------

    def to_toml(self) -> str:
        lines = ["# task specification; vectors in cost-feature space where noted"]
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, str):
                lines.append(f'{f.name} = "{v}"')
            elif isinstance(v, tuple):
                lines.append(f"{f.name} = [{', '.join(repr(float(x)) for x in v)}]")
            else:
                lines.append(f"{f.name} = {v!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "TaskSpec":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown task keys: {sorted(unknown)}")
        missing = names - set(data)
        if missing:
            raise ValueError(f"missing task keys: {sorted(missing)}")
        return cls(**data)

    @classmethod
    def from_toml(cls, text: str) -> "TaskSpec":
        return cls.from_dict(toml_loads(text))

    def save(self, path) -> None:
        Path(path).write_text(self.to_toml())

    @classmethod
    def load(cls, path) -> "TaskSpec":
        return cls.from_toml(Path(path).read_text())


MOUNTAIN_CAR = TaskSpec(
    dynamics="mountain-car", dt=3.0, horizon=30, steps=150,
    u_min=(-1.0,), u_max=(1.0,),
    q=(1.0, 1.0), r=0.1, q_terminal=(1.0, 1.0), goal=(math.pi / 2, 0.0),
    noise_var=(0.0, 1e-7),
    init_low=(-0.7, 0.0), init_high=(-0.3, 0.0),
    beta=0.25, sigma0=1.5,
)

CART_POLE = TaskSpec(
    dynamics="cart-pole", dt=0.02, horizon=30, steps=300,
    u_min=(-10.0,), u_max=(10.0,),
    q=(0.1, 0.1, 1.0, 0.1, 0.1), r=1e-4, q_terminal=(10.0, 0.1, 10.0, 0.1, 0.1),
    goal=(0.0, 0.0, 1.0, 0.0, 0.0),
    noise_var=(0.0, 1e-8, 0.0, 1e-8),
    init_low=(0.0, 0.0, math.radians(145.0), 0.0), init_high=(0.0, 0.0, math.radians(215.0), 0.0),
    beta=1.0, sigma0=10.0,
)

TASKS = {"mountain-car": MOUNTAIN_CAR, "cart-pole": CART_POLE}


# -- costs and rollouts ---------------------------------------------------------


def stage_cost(state, u, task: TaskSpec):
    e = task.plant.features(state) - np.asarray(task.goal)
    u = np.asarray(u, dtype=float)
    return np.sum(np.asarray(task.q) * e**2, axis=-1) + task.r * np.sum(u**2, axis=-1)


def terminal_cost(state, task: TaskSpec):
    e = task.plant.features(state) - np.asarray(task.goal)
    return np.sum(np.asarray(task.q_terminal) * e**2, axis=-1)


@dataclass(frozen=True)
class Rollout:
    states: np.ndarray  # (n, H + 1, d_x)
    stage_costs: np.ndarray  # (n, H)
    terminal_costs: np.ndarray  # (n,)
    costs: np.ndarray  # (n,), +inf where the trajectory went non-finite


def rollout(x0, sequences, task: TaskSpec) -> Rollout:
    """Noise-free shooting of a batch of control sequences from ``x0``.

    ``sequences`` is ``(n, H * d_u)`` (flattened, time-major) or ``(n, H, d_u)``.
    """
    dyn = task.plant
    seq = np.asarray(sequences, dtype=float)
    if seq.ndim == 1:
        seq = seq[None]
    seq = seq.reshape(seq.shape[0], -1, dyn.control_dim)
    n, horizon, _ = seq.shape
    x = np.broadcast_to(np.asarray(x0, dtype=float), (n, dyn.state_dim)).copy()
    states = np.empty((n, horizon + 1, dyn.state_dim))
    stage = np.empty((n, horizon))
    states[:, 0] = x
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(horizon):
            u = seq[:, t]
            stage[:, t] = stage_cost(x, u, task)
            x = rk4_step(dyn.deriv, x, u, task.dt)
            states[:, t + 1] = x
        term = terminal_cost(x, task)
        total = stage.sum(axis=1) + term
    bad = ~np.all(np.isfinite(states), axis=(1, 2)) | ~np.isfinite(total)
    total = np.where(bad, np.inf, total)
    return Rollout(states, stage, term, total)


def rollout_costs(x0, sequences, task: TaskSpec, compiled: bool = True) -> np.ndarray:
    """Total cost of each sequence; uses the compiled kernel for the benchmark plants."""
    if compiled and task.dynamics in _kernels.KERNELS and task.control_dim == 1:
        seq = np.ascontiguousarray(np.asarray(sequences, dtype=float).reshape(-1, task.horizon))
        return _kernels.KERNELS[task.dynamics](
            np.asarray(x0, dtype=float), seq, float(task.dt), np.asarray(task.q), float(task.r),
            np.asarray(task.q_terminal), np.asarray(task.goal))
    return rollout(x0, sequences, task).costs


def simulate_step(state, u, task: TaskSpec, rng: np.random.Generator):
    """Apply ``u`` to the true plant: RK4 step plus additive Gaussian process noise."""
    nxt = rk4_step(task.plant.deriv, state, u, task.dt)
    w = rng.standard_normal(task.plant.state_dim) * np.sqrt(np.asarray(task.noise_var))
    return nxt + w


def sample_initial_state(task: TaskSpec, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(np.asarray(task.init_low), np.asarray(task.init_high))


def smoothness(controls) -> float:
    """Sum of squared differences between consecutive controls (0 for fewer than 2)."""
    u = np.asarray(controls, dtype=float)
    if u.shape[0] < 2:
        return 0.0
    u = u.reshape(u.shape[0], -1)
    return float(np.sum(np.diff(u, axis=0) ** 2))


def is_success(task: TaskSpec, states) -> bool:
    """Goal reached and held; thresholds are fixed per plant (reporting only)."""
    states = np.asarray(states)
    if not np.all(np.isfinite(states)):
        return False
    if task.dynamics == "mountain-car":
        x, v = states[-1]
        return bool(abs(x - math.pi / 2) < 0.05 and abs(v) < 0.02)
    if task.dynamics == "cart-pole":
        return bool(np.mean(1.0 - np.cos(states[-50:, 2])) < 0.1)
    return bool(np.allclose(task.plant.features(states[-1]), task.goal, atol=0.05))


@dataclass(frozen=True)
class RunRecord:
    """Closed-loop log: ``states`` has T + 1 rows, controls and stage costs T."""

    states: np.ndarray
    controls: np.ndarray
    stage_costs: np.ndarray
    success: bool
    rollouts: int

    @property
    def cumulative_cost(self) -> float:
        return float(np.sum(self.stage_costs))

    @property
    def smoothness(self) -> float:
        return smoothness(self.controls)
