"""Gaussian proposal over flattened control sequences.

A control sequence of horizon H and control dimension d_u is flattened
time-major into a vector of length D = d_u * H.  Candidates are produced by
mapping unit-Gaussian points (deterministic or random) through
``y = mean + L (R x)`` where ``L L^T`` is the proposal covariance and ``R`` an
optional rotation.
"""
from __future__ import annotations

import enum
import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .lcd import SampleSet

log = logging.getLogger(__name__)

JITTER_START = 1e-10
JITTER_MAX = 1e-4


class VarietyScheme(str, enum.Enum):
    V1 = "v1"  # fresh random rotation per CEM iteration
    V2 = "v2"  # blocks of one joint deterministic set, no randomness
    V3 = "v3"  # joint set, one rotation per MPC step


@dataclass(frozen=True)
class NoiseColorSpec:
    beta: float
    horizon: int
    control_dim: int = 1

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.horizon < 1 or self.control_dim < 1:
            raise ValueError("horizon and control_dim must be positive")


def repair_spd(mat: np.ndarray) -> tuple[np.ndarray, float]:
    """Symmetrize and add escalating diagonal jitter until positive definite.

    Jitter starts at ``1e-10 * trace / D`` and grows by 10x up to ``1e-4 * trace / D``.
    A matrix is accepted once its smallest eigenvalue reaches the starting
    jitter level.  Returns the matrix and the jitter added (0.0 if none).
    """
    mat = 0.5 * (mat + mat.T)
    dim = mat.shape[0]
    scale = np.trace(mat) / dim
    if not np.isfinite(scale) or scale <= 0:
        raise np.linalg.LinAlgError("covariance has nonpositive trace")
    floor = JITTER_START * scale
    jitter = 0.0
    while True:
        cand = mat + jitter * np.eye(dim) if jitter else mat
        if np.linalg.eigvalsh(cand)[0] >= floor:
            return cand, jitter
        jitter = floor if jitter == 0.0 else 10.0 * jitter
        if jitter > JITTER_MAX * scale * (1 + 1e-12):
            cond = np.linalg.cond(mat)
            raise np.linalg.LinAlgError(
                f"covariance not repairable with jitter <= {JITTER_MAX:g} * trace/D (cond={cond:.3e})")


def colored_correlation(spec: NoiseColorSpec) -> np.ndarray:
    """Toeplitz correlation of 1/f^beta noise, block-diagonal across control dims.

    The autocorrelation is the inverse real FFT of the power spectrum sampled
    on a grid of length 2H (so lags up to H - 1 do not wrap around), with the
    zero frequency replaced by the first nonzero one.  Sampling a positive
    spectrum on a circulant grid makes the H x H principal block positive
    definite.
    """
    h = spec.horizon
    f = np.fft.rfftfreq(2 * h)
    f[0] = f[1]
    acf = np.fft.irfft(f ** (-spec.beta), n=2 * h)[:h]
    acf = acf / acf[0]
    corr = np.kron(linalg.toeplitz(acf), np.eye(spec.control_dim))
    if np.linalg.eigvalsh(corr)[0] < JITTER_START:
        corr, _ = repair_spd(corr)
        d = np.sqrt(np.diag(corr))
        corr = corr / np.outer(d, d)
    return corr


def _cholesky(mat: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        fixed, jitter = repair_spd(mat)
        log.info("cholesky needed jitter %.3e", jitter)
        return np.linalg.cholesky(fixed)


@dataclass(frozen=True)
class FixedCorrelation:
    """``C = diag(sigmas) corr diag(sigmas)`` with the correlation factor cached."""

    corr: np.ndarray
    sigmas: np.ndarray
    corr_sqrt: np.ndarray

    @classmethod
    def build(cls, corr, sigmas) -> "FixedCorrelation":
        corr = np.asarray(corr, dtype=float)
        if not np.allclose(corr, corr.T, atol=1e-12) or not np.allclose(np.diag(corr), 1.0, atol=1e-12):
            raise ValueError("correlation must be symmetric with unit diagonal")
        sqrt = _cholesky(corr)
        return cls(corr, np.broadcast_to(np.asarray(sigmas, float), corr.shape[:1]).copy(), sqrt)

    def __post_init__(self):
        if np.any(~(self.sigmas > 0)):
            raise ValueError("sigmas must be positive")

    def covariance(self) -> np.ndarray:
        return self.sigmas[:, None] * self.corr * self.sigmas[None, :]

    def sqrt(self) -> np.ndarray:
        return self.sigmas[:, None] * self.corr_sqrt


@dataclass(frozen=True)
class FullCovariance:
    cov: np.ndarray

    def covariance(self) -> np.ndarray:
        return self.cov

    def sqrt(self) -> np.ndarray:
        try:
            return np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError:
            cond = np.linalg.cond(self.cov)
            raise np.linalg.LinAlgError(f"covariance square root failed (cond={cond:.3e})") from None


@dataclass(frozen=True)
class ProposalParams:
    mean: np.ndarray
    cov_model: FixedCorrelation | FullCovariance

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def covariance(self) -> np.ndarray:
        return self.cov_model.covariance()

    def sqrt(self) -> np.ndarray:
        return self.cov_model.sqrt()


def initial_params(dim: int, sigma0: float, corr: np.ndarray, full: bool = False) -> ProposalParams:
    """Zero mean, marginal std ``sigma0``, given correlation; ``full`` gives an M2 model."""
    fixed = FixedCorrelation.build(corr, np.full(dim, float(sigma0)))
    if full:
        return ProposalParams(np.zeros(dim), FullCovariance(fixed.covariance()))
    return ProposalParams(np.zeros(dim), fixed)


def transform_samples(base, params: ProposalParams, rotation=None) -> np.ndarray:
    """Map unit-Gaussian rows ``x`` to ``mean + L R x``."""
    pts = base.points if isinstance(base, SampleSet) else np.asarray(base, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != params.dim:
        raise ValueError(f"base set dimension {pts.shape[-1]} does not match proposal dimension {params.dim}")
    if rotation is not None:
        pts = pts @ np.asarray(rotation).T
    return params.mean + pts @ params.sqrt().T


def random_rotation(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed element of SO(dim)."""
    if dim < 1:
        raise ValueError("dimension must be positive")
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def block(joint, j: int, dim: int) -> np.ndarray:
    """Columns of iteration ``j`` in a joint set of dimension ``dim * n_iter``."""
    pts = joint.points if isinstance(joint, SampleSet) else np.asarray(joint)
    if pts.shape[1] % dim:
        raise ValueError(f"joint dimension {pts.shape[1]} is not a multiple of {dim}")
    if not 0 <= j < pts.shape[1] // dim:
        raise IndexError(f"block {j} out of range for {pts.shape[1] // dim} iterations")
    return pts[:, j * dim:(j + 1) * dim]


def next_candidates(scheme: VarietyScheme, j: int, params: ProposalParams, base,
                    rng: np.random.Generator | None = None, step_rotation=None) -> np.ndarray:
    """Candidates for CEM iteration ``j``.

    ``base`` is the D-dimensional set for V1 and the joint (D * n_iter)-dimensional
    set for V2/V3.  V3 needs the rotation drawn at the start of the MPC step.
    """
    scheme = VarietyScheme(scheme)
    d = params.dim
    if scheme is VarietyScheme.V1:
        if rng is None:
            raise ValueError("V1 needs a random generator")
        return transform_samples(base, params, random_rotation(d, rng))
    pts = block(base, j, d)
    if scheme is VarietyScheme.V2:
        return transform_samples(pts, params)
    if step_rotation is None:
        raise ValueError("V3 needs the per-step rotation")
    return transform_samples(pts, params, step_rotation)


def _check_elites(elites, params) -> np.ndarray:
    elites = np.asarray(elites, dtype=float)
    if elites.ndim != 2 or elites.shape[1] != params.dim:
        raise ValueError("elite matrix must be K x D")
    return elites


def update_m1(params: ProposalParams, elites, alpha: float, sigma_floor=0.0,
              momentum_on: str = "std") -> ProposalParams:
    """Fixed correlation, adaptive marginal variances.

    Momentum blends the mean, and either the std devs (``momentum_on="std"``)
    or the variances (``"var"``).
    """
    elites = _check_elites(elites, params)
    if elites.shape[0] < 2:
        raise ValueError("M1 update needs at least two elites")
    model = params.cov_model
    if not isinstance(model, FixedCorrelation):
        raise TypeError("M1 update needs a fixed-correlation proposal")
    mean = alpha * params.mean + (1.0 - alpha) * elites.mean(axis=0)
    var = np.mean((elites - mean) ** 2, axis=0)
    if momentum_on == "std":
        sig = alpha * model.sigmas + (1.0 - alpha) * np.sqrt(var)
    elif momentum_on == "var":
        sig = np.sqrt(alpha * model.sigmas**2 + (1.0 - alpha) * var)
    else:
        raise ValueError(f"momentum_on must be 'std' or 'var', got {momentum_on!r}")
    sig = np.maximum(sig, sigma_floor)
    if np.any(sig <= 0):
        sig = np.where(sig > 0, sig, np.finfo(float).tiny)
    return ProposalParams(mean, FixedCorrelation(model.corr, sig, model.corr_sqrt))


def update_m2(params: ProposalParams, elites, alpha: float) -> ProposalParams:
    """Full covariance: momentum blend of the old covariance and the elite MLE."""
    elites = _check_elites(elites, params)
    if elites.shape[0] < params.dim + 1:
        raise ValueError(f"M2 update needs at least D + 1 = {params.dim + 1} elites")
    mean = alpha * params.mean + (1.0 - alpha) * elites.mean(axis=0)
    dev = elites - mean
    cov = alpha * params.covariance() + (1.0 - alpha) * (dev.T @ dev) / elites.shape[0]
    cov, jitter = repair_spd(cov)
    if jitter:
        warnings.warn(f"elite covariance rank deficient; added jitter {jitter:.3e}", RuntimeWarning, stacklevel=2)
    return ProposalParams(mean, FullCovariance(cov))
