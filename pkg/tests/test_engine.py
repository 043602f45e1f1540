import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dscem.engine import (
    Adaptation,
    CemConfig,
    CemMpc,
    SamplerSpec,
    cem_optimize,
    decayed_count,
    mpc_step,
    run_episode,
    select_elite,
    shift_sequence,
)
from dscem.plants import TaskSpec
from dscem.proposal import VarietyScheme, initial_params, update_m1

TOY = TaskSpec(dynamics="integrator", dt=1.0, horizon=2, steps=4, u_min=(-1.0,), u_max=(1.0,),
               q=(1.0,), r=0.1, q_terminal=(1.0,), goal=(0.0,), noise_var=(0.0,),
               init_low=(1.0,), init_high=(1.0,), beta=0.0, sigma0=0.5)


def toy_grid_optimum(x0=1.0):
    """Exhaustive search over the [-1, 1]^2 control grid at spacing 1e-3."""
    u = np.linspace(-1, 1, 2001)
    u0, u1 = np.meshgrid(u, u, indexing="ij")
    x1 = x0 + u0
    x2 = x1 + u1
    cost = x0**2 + 0.1 * u0**2 + x1**2 + 0.1 * u1**2 + x2**2
    return float(cost.min())


def quadratic(target):
    return lambda y: np.sum((y - target) ** 2, axis=1)


class TestSelectElite:
    def test_basic_order(self):
        e = select_elite(np.arange(3)[:, None], [3.0, 1.0, 2.0], 2)
        assert list(e.indices) == [1, 2] and list(e.costs) == [1.0, 2.0]

    def test_nan_ranks_last(self):
        e = select_elite(np.arange(4)[:, None], [np.nan, 5.0, np.inf, 1.0], 3)
        assert list(e.indices) == [3, 1, 2]

    def test_ties_are_stable(self):
        assert list(select_elite(np.zeros((5, 1)), np.ones(5), 2).indices) == [0, 1]

    def test_too_many(self):
        with pytest.raises(ValueError):
            select_elite(np.zeros((2, 1)), [1.0, 2.0], 3)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(allow_nan=True, allow_infinity=True), min_size=1, max_size=30), st.data())
    def test_property_sorted_and_minimal(self, costs, data):
        k = data.draw(st.integers(1, len(costs)))
        e = select_elite(np.arange(len(costs))[:, None], costs, k)
        c = np.asarray(costs)
        finite_sorted = np.sort(c[~np.isnan(c)])
        expected = np.concatenate([finite_sorted, np.full(np.isnan(c).sum(), np.nan)])[:k]
        assert np.array_equal(e.costs, expected, equal_nan=True)
        assert np.array_equal(e.sequences[:, 0], e.indices)


class TestShift:
    def test_basic(self):
        assert list(shift_sequence([1.0, 2.0, 3.0], 9.0)) == [2.0, 3.0, 9.0]

    def test_horizon_one(self):
        assert list(shift_sequence([4.0], 0.5)) == [0.5]

    def test_twice(self):
        once = shift_sequence(shift_sequence([1.0, 2.0, 3.0, 4.0], 7.0), 8.0)
        assert list(once) == [3.0, 4.0, 7.0, 8.0]

    def test_multi_input_and_batch(self):
        seq = np.arange(6.0)  # H = 3, d_u = 2
        assert list(shift_sequence(seq, 0.0, control_dim=2)) == [2, 3, 4, 5, 0, 0]
        batch = np.arange(12.0).reshape(2, 6)
        assert np.array_equal(shift_sequence(batch, 0.0, 2)[1], [8, 9, 10, 11, 0, 0])


class TestDecay:
    def test_disabled(self):
        assert all(decayed_count(100, 1.0, j, 10) == 100 for j in range(6))

    def test_floor_at_two_k(self):
        assert decayed_count(100, 2.0, 3, 10) == 20

    def test_halving(self):
        assert decayed_count(100, 2.0, 1, 10) == 50

    def test_decay_changes_pool_sizes(self):
        cfg = CemConfig(100, 10, 4, decay=2.0)
        res = cem_optimize(quadratic(np.ones(3)), cfg, initial_params(3, 1.0, np.eye(3)), np.random.default_rng(0))
        assert [t.n_evaluated for t in res.trace] == [100, 50, 25, 20]


class TestConfig:
    def test_zero_iterations(self):
        with pytest.raises(ValueError, match="at least one iteration required"):
            CemConfig(10, 2, 0)

    def test_elite_bound(self):
        with pytest.raises(ValueError):
            CemConfig(5, 6, 1)

    def test_full_covariance_needs_enough_elites(self):
        cfg = CemConfig(100, 10, 3, sampler=SamplerSpec.parse("dscem-cov-v3"))
        with pytest.raises(ValueError, match="D \\+ 1"):
            cfg.check_dim(30)

    def test_joint_sets_forbid_decay(self):
        with pytest.raises(ValueError):
            CemConfig(100, 10, 3, decay=2.0, sampler=SamplerSpec.parse("dscem-var-v2"))

    def test_carry_count(self):
        assert CemConfig(50, 10, 3, elite_carry_fraction=0.3).n_keep == 3

    @pytest.mark.parametrize("name,random,scheme,adapt", [
        ("icem", True, None, Adaptation.M1),
        ("dscem-var-v2", False, VarietyScheme.V2, Adaptation.M1),
        ("dscem-cov-v3", False, VarietyScheme.V3, Adaptation.M2),
    ])
    def test_parse(self, name, random, scheme, adapt):
        s = SamplerSpec.parse(name)
        assert (s.random, s.scheme, s.adapt) == (random, scheme, adapt)

    def test_parse_unknown(self):
        with pytest.raises(ValueError):
            SamplerSpec.parse("dscem-var-v4")


class TestCemOptimize:
    def test_2d_quadratic_v2(self, tmp_cache):
        target = np.array([3.0, -1.0])
        cfg = CemConfig(50, 10, 20, sampler=SamplerSpec.parse("dscem-var-v2"))
        res = cem_optimize(quadratic(target), cfg, initial_params(2, 2.0, np.eye(2)), samples=tmp_cache)
        assert np.linalg.norm(res.best - target) < 1e-2

    def test_identical_costs_take_first_k(self):
        cfg = CemConfig(20, 4, 1, elite_carry_fraction=0.0)
        res = cem_optimize(lambda y: np.zeros(len(y)), cfg, initial_params(2, 1.0, np.eye(2)), np.random.default_rng(0))
        assert list(res.elites.indices) == [0, 1, 2, 3]

    def test_best_is_top_of_final_elite(self, rng):
        cfg = CemConfig(40, 5, 3)
        res = cem_optimize(quadratic(np.ones(4)), cfg, initial_params(4, 1.0, np.eye(4)), rng)
        assert np.array_equal(res.best, res.elites.sequences[0]) and res.best_cost == res.elites.costs[0]

    def test_non_finite_costs_rank_worst(self, rng):
        def cost(y):
            c = np.sum(y**2, axis=1)
            c[::2] = np.nan
            c[1::4] = np.inf
            return c

        res = cem_optimize(cost, CemConfig(40, 5, 2), initial_params(2, 1.0, np.eye(2)), rng)
        assert np.isfinite(res.best_cost)

    def test_all_non_finite_is_error(self, rng):
        with pytest.raises(FloatingPointError):
            cem_optimize(lambda y: np.full(len(y), np.nan), CemConfig(10, 3, 2), initial_params(1, 1.0, np.eye(1)), rng)

    def test_clipping_before_evaluation(self, rng):
        seen = []

        def cost(y):
            seen.append(y.copy())
            return np.sum((y - 2.7) ** 2, axis=1)

        cem_optimize(cost, CemConfig(30, 5, 4), initial_params(2, 3.0, np.eye(2)), rng,
                     bounds=(np.full(2, -1.0), np.full(2, 1.0)))
        pool = np.vstack(seen)
        assert pool.max() == 1.0 and pool.min() >= -1.0

    def test_monotone_best_with_reinjection(self):
        for seed in range(10):
            res = cem_optimize(quadratic(np.full(5, 2.0)), CemConfig(30, 10, 8),
                               initial_params(5, 1.0, np.eye(5)), np.random.default_rng(seed))
            best = [t.best_cost for t in res.trace]
            assert all(b2 <= b1 + 1e-12 for b1, b2 in zip(best, best[1:]))

    def test_median_best_cost_decreases(self):
        runs = []
        for seed in range(20):
            res = cem_optimize(quadratic(np.full(6, -1.5)), CemConfig(50, 10, 8, elite_carry_fraction=0.0),
                               initial_params(6, 1.0, np.eye(6)), np.random.default_rng(seed))
            runs.append([t.best_cost for t in res.trace])
        med = np.median(runs, axis=0)
        assert np.all(np.diff(med) < 0)

    def test_full_covariance_variant(self, tmp_cache):
        cfg = CemConfig(40, 10, 10, sampler=SamplerSpec.parse("dscem-cov-v3"))
        res = cem_optimize(quadratic(np.array([1.0, 2.0])), cfg, initial_params(2, 2.0, np.eye(2), full=True),
                           np.random.default_rng(0), tmp_cache)
        assert np.linalg.norm(res.best - [1.0, 2.0]) < 0.05

    def test_v2_is_fully_deterministic(self, tmp_cache):
        cfg = CemConfig(50, 10, 5, sampler=SamplerSpec.parse("dscem-var-v2"))
        p = initial_params(2, 1.0, np.eye(2))
        a = cem_optimize(quadratic(np.ones(2)), cfg, p, np.random.default_rng(1), tmp_cache)
        b = cem_optimize(quadratic(np.ones(2)), cfg, p, np.random.default_rng(2), tmp_cache)
        assert a.best.tobytes() == b.best.tobytes()


def test_momentum_converges_geometrically():
    elites = np.array([[1.0, 4.0], [3.0, 0.0]])
    target = elites.mean(axis=0)
    p = initial_params(2, 1.0, np.eye(2))
    gap0 = np.linalg.norm(p.mean - target)
    for j in range(1, 8):
        p = update_m1(p, elites, 0.1)
        assert np.linalg.norm(p.mean - target) == pytest.approx(0.1**j * gap0, rel=1e-9)


class TestMpc:
    def test_toy_step_near_grid_optimum(self, tmp_cache):
        ref = toy_grid_optimum()
        for method in ("icem", "dscem-var-v1", "dscem-var-v2"):
            cfg = CemConfig(300, 10, 5, sampler=SamplerSpec.parse(method))
            ctl = CemMpc(TOY, cfg, tmp_cache)
            _, _, tr = mpc_step(ctl.initial_state(), np.array([1.0]), TOY, cfg, np.random.default_rng(0), controller=ctl)
            assert tr.best_cost - ref < 1e-2, method
            assert tr.best_cost >= ref - 1e-6

    def test_carried_elites(self, rng):
        cfg = CemConfig(30, 10, 2, elite_carry_fraction=0.3)
        ctl = CemMpc(TOY, cfg)
        s0 = ctl.initial_state()
        assert s0.carried.shape[0] == 0
        _, s1, tr = ctl.step(s0, np.array([1.0]), rng)
        assert s1.carried.shape == (3, TOY.flat_dim) and s1.step == 1
        assert np.all(s1.carried[:, -1] == 0.0)
        assert tr.evaluations == 30 * 2

    def test_next_state_is_shifted_mean(self, rng):
        cfg = CemConfig(30, 10, 3)
        ctl = CemMpc(TOY.replace(horizon=4), cfg)
        s0 = ctl.initial_state()
        _, s1, tr = ctl.step(s0, np.array([1.0]), rng)
        assert np.allclose(s1.proposal.mean, shift_sequence(tr.iterations[-1].mean, 0.0))
        assert s1.proposal.cov_model is ctl.initial.cov_model

    def test_controls_within_limits(self):
        rec = run_episode(TOY.replace(steps=6, init_low=(5.0,), init_high=(5.0,)), CemConfig(20, 5, 2), 0, 1)
        assert np.all(np.abs(rec.controls) <= 1.0)
        assert rec.controls.shape == (6, 1) and rec.states.shape == (7, 1)

    def test_rollout_budget(self):
        rec = run_episode(TOY, CemConfig(20, 5, 3), 0, 1)
        assert rec.rollouts == 20 * 3 * TOY.steps

    def test_v2_episode_bit_identical(self, tmp_cache):
        task = TOY.replace(noise_var=(1e-3,), init_low=(0.5,), init_high=(1.5,))
        cfg = CemConfig(30, 10, 3, sampler=SamplerSpec.parse("dscem-var-v2"))
        a = run_episode(task, cfg, 11, 12, tmp_cache)
        b = run_episode(task, cfg, 11, 99, tmp_cache)
        assert a.states.tobytes() == b.states.tobytes() and a.controls.tobytes() == b.controls.tobytes()

    def test_v3_rotations_differ_between_steps(self, tmp_cache):
        cfg = CemConfig(30, 10, 3, sampler=SamplerSpec.parse("dscem-var-v3"))
        ctl = CemMpc(TOY, cfg, tmp_cache)
        rng = np.random.default_rng(0)
        assert not np.allclose(ctl.source.begin_step(rng), ctl.source.begin_step(rng))
