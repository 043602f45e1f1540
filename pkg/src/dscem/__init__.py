"""Cross-entropy MPC with precomputed deterministic Gaussian sample sets."""
from .cache import SampleCache, SampleCacheKey, load_cache, save_cache
from .engine import CemConfig, CemMpc, SamplerSpec, cem_optimize, mpc_step, run_episode, select_elite, shift_sequence
from .lcd import KernelParams, OptimizerConfig, SampleSet, cvm_distance, dirac_lcd, gaussian_lcd, optimize_samples
from .plants import CART_POLE, MOUNTAIN_CAR, TASKS, TaskSpec
from .proposal import ProposalParams, VarietyScheme, colored_correlation, transform_samples

__all__ = [
    "CART_POLE", "MOUNTAIN_CAR", "TASKS", "CemConfig", "CemMpc", "KernelParams", "OptimizerConfig",
    "ProposalParams", "SampleCache", "SampleCacheKey", "SampleSet", "SamplerSpec", "TaskSpec",
    "VarietyScheme", "cem_optimize", "colored_correlation", "cvm_distance", "dirac_lcd", "gaussian_lcd",
    "load_cache", "mpc_step", "optimize_samples", "run_episode", "save_cache", "select_elite",
    "shift_sequence", "transform_samples",
]
