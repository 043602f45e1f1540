import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import linalg, stats

from dscem.lcd import optimize_samples
from dscem.proposal import (
    FixedCorrelation,
    FullCovariance,
    NoiseColorSpec,
    ProposalParams,
    VarietyScheme,
    block,
    colored_correlation,
    initial_params,
    next_candidates,
    random_rotation,
    repair_spd,
    transform_samples,
    update_m1,
    update_m2,
)


def acf_oracle(beta, h):
    """Autocorrelation from an explicit cosine sum over the one-sided spectrum of a length-2H grid."""
    n = 2 * h
    k = np.arange(h + 1)
    f = k / n
    f[0] = f[1]
    psd = f ** (-beta)
    weight = np.where((k == 0) | (k == h), 1.0, 2.0)
    lags = np.arange(h)
    acf = (weight * psd * np.cos(2 * np.pi * np.outer(lags, k) / n)).sum(axis=1)
    return acf / acf[0]


def symmetric_set(n, d, seed=0):
    half = np.random.default_rng(seed).standard_normal((n // 2, d))
    return np.vstack([half, -half])


class TestColoredCorrelation:
    def test_white_noise_is_identity(self):
        assert np.allclose(colored_correlation(NoiseColorSpec(0.0, 30)), np.eye(30), atol=1e-14)

    def test_pink_noise_structure(self):
        c = colored_correlation(NoiseColorSpec(1.0, 30))
        first = c[0]
        assert np.allclose(c, linalg.toeplitz(first), atol=0)
        assert np.allclose(np.diag(c), 1.0)
        assert np.all(np.diff(first) <= 1e-15)
        assert np.linalg.eigvalsh(c)[0] > 0

    def test_matches_cosine_sum_oracle(self):
        for beta in (0.25, 1.0, 2.0):
            c = colored_correlation(NoiseColorSpec(beta, 30))
            assert np.allclose(c[0], acf_oracle(beta, 30), atol=1e-12)

    def test_weaker_color_has_smaller_correlations(self):
        lo = colored_correlation(NoiseColorSpec(0.25, 30))[0, 1:]
        hi = colored_correlation(NoiseColorSpec(1.0, 30))[0, 1:]
        assert np.all(np.abs(lo) < np.abs(hi))

    @pytest.mark.parametrize("beta", [0.0, 0.25, 0.5, 1.0, 2.0])
    @pytest.mark.parametrize("h", [5, 30, 100])
    def test_spd_unit_diagonal(self, beta, h):
        c = colored_correlation(NoiseColorSpec(beta, h))
        assert np.array_equal(c, c.T)
        assert np.allclose(np.diag(c), 1.0, atol=1e-14)
        assert np.linalg.eigvalsh(c)[0] > 0

    def test_control_dims_are_uncorrelated(self):
        c = colored_correlation(NoiseColorSpec(1.0, 6, control_dim=2))
        assert c.shape == (12, 12)
        assert np.all(c[0::2, 1::2] == 0)
        assert np.allclose(c[0::2, 0::2], colored_correlation(NoiseColorSpec(1.0, 6)))

    def test_rejects_negative_beta(self):
        with pytest.raises(ValueError):
            NoiseColorSpec(-0.1, 5)


class TestRepair:
    def test_spd_input_untouched(self):
        m, jit = repair_spd(np.diag([1.0, 2.0]))
        assert jit == 0.0 and np.array_equal(m, np.diag([1.0, 2.0]))

    def test_singular_input_gets_floor(self):
        v = np.array([1.0, 2.0])
        m, jit = repair_spd(np.outer(v, v))
        assert jit > 0
        assert np.linalg.eigvalsh(m)[0] >= 1e-10 * np.trace(np.outer(v, v)) / 2

    def test_unrepairable_raises(self):
        with pytest.raises(np.linalg.LinAlgError):
            repair_spd(np.diag([1.0, -0.5]))


class TestTransform:
    def test_identity_transform(self, rng):
        base = rng.standard_normal((5, 3))
        p = initial_params(3, 1.0, np.eye(3))
        assert np.array_equal(transform_samples(base, p), base)

    def test_symmetric_set_mean_is_exact(self):
        mu = np.array([0.5, -2.0, 3.25])
        base = symmetric_set(10, 3)
        p = ProposalParams(mu, FixedCorrelation.build(np.eye(3), 1.0))
        assert np.allclose(transform_samples(base, p).mean(axis=0), mu, atol=1e-15)

    def test_diagonal_scaling(self):
        mu = np.array([0.3, 0.7])
        p = ProposalParams(mu, FullCovariance(np.diag([4.0, 1.0])))
        assert np.allclose(transform_samples(np.array([[1.0, 1.0]]), p), [[2.3, 1.7]])

    def test_fixed_correlation_factor(self):
        corr = colored_correlation(NoiseColorSpec(1.0, 4))
        sig = np.array([1.0, 2.0, 0.5, 3.0])
        fc = FixedCorrelation.build(corr, sig)
        assert np.allclose(fc.sqrt() @ fc.sqrt().T, np.diag(sig) @ corr @ np.diag(sig))

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2**31))
    def test_moment_preservation(self, seed):
        g = np.random.default_rng(seed)
        d = 4
        base = symmetric_set(12, d, seed)
        a = g.standard_normal((d, d))
        p = ProposalParams(g.standard_normal(d), FullCovariance(a @ a.T + 0.5 * np.eye(d)))
        r = random_rotation(d, g)
        y = transform_samples(base, p, r)
        lmat = p.sqrt() @ r
        assert np.allclose(y.mean(axis=0), p.mean + lmat @ base.mean(axis=0), atol=1e-10)
        cb = np.cov(base, rowvar=False, bias=True)
        assert np.allclose(np.cov(y, rowvar=False, bias=True), lmat @ cb @ lmat.T, atol=1e-10)

    def test_rotated_isotropic_set_keeps_covariance(self):
        s = optimize_samples(3, 20)
        cb = np.cov(s.points, rowvar=False, bias=True)
        r = random_rotation(3, np.random.default_rng(3))
        rotated = s.points @ r.T
        assert np.allclose(np.cov(rotated, rowvar=False, bias=True), r @ cb @ r.T, atol=1e-12)
        assert not np.allclose(rotated, s.points)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            transform_samples(np.zeros((3, 2)), initial_params(3, 1.0, np.eye(3)))

    def test_non_spd_sqrt_reports_condition(self):
        p = ProposalParams(np.zeros(2), FullCovariance(np.array([[1.0, 2.0], [2.0, 1.0]])))
        with pytest.raises(np.linalg.LinAlgError, match="cond"):
            transform_samples(np.zeros((1, 2)), p)


class TestRotation:
    def test_so1(self, rng):
        assert np.array_equal(random_rotation(1, rng), [[1.0]])

    def test_orthogonal_with_unit_determinant(self):
        r = random_rotation(3, np.random.default_rng(0))
        assert np.abs(r.T @ r - np.eye(3)).max() < 1e-12
        assert abs(np.linalg.det(r) - 1.0) < 1e-12

    @settings(max_examples=20, deadline=None)
    @given(d=st.integers(1, 12), seed=st.integers(0, 2**31))
    def test_always_special_orthogonal(self, d, seed):
        r = random_rotation(d, np.random.default_rng(seed))
        assert np.abs(r.T @ r - np.eye(d)).max() < 1e-10
        assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-10)

    def test_haar_angles_uniform(self):
        g = np.random.default_rng(2024)
        ang = np.array([np.arctan2(r[1, 0], r[0, 0]) % (2 * np.pi) for r in (random_rotation(2, g) for _ in range(10_000))])
        assert stats.kstest(ang, stats.uniform(0, 2 * np.pi).cdf).pvalue > 0.01


class TestNextCandidates:
    d, n_iter = 3, 4

    @pytest.fixture
    def params(self):
        return initial_params(self.d, 0.7, colored_correlation(NoiseColorSpec(1.0, 3)))

    @pytest.fixture
    def joint(self):
        return symmetric_set(8, self.d * self.n_iter)

    def test_v2_deterministic(self, params, joint):
        a = [next_candidates(VarietyScheme.V2, j, params, joint) for j in range(self.n_iter)]
        b = [next_candidates(VarietyScheme.V2, j, params, joint) for j in range(self.n_iter)]
        assert all(x.tobytes() == y.tobytes() for x, y in zip(a, b))
        assert not np.allclose(a[0], a[1])

    def test_v1_varies(self, params, rng):
        base = symmetric_set(8, self.d)
        assert not np.allclose(next_candidates("v1", 0, params, base, rng), next_candidates("v1", 1, params, base, rng))

    def test_v3_shares_rotation_within_step(self, params, joint):
        r1 = random_rotation(self.d, np.random.default_rng(1))
        r2 = random_rotation(self.d, np.random.default_rng(2))
        for j in range(self.n_iter):
            got = next_candidates("v3", j, params, joint, step_rotation=r1)
            assert np.allclose(got, transform_samples(block(joint, j, self.d), params, r1))
        assert not np.allclose(next_candidates("v3", 0, params, joint, step_rotation=r1),
                               next_candidates("v3", 0, params, joint, step_rotation=r2))

    def test_block_out_of_range(self, params, joint):
        with pytest.raises(IndexError):
            next_candidates("v2", self.n_iter, params, joint)

    def test_blocks_partition_joint(self, joint):
        parts = [block(joint, j, self.d) for j in range(self.n_iter)]
        assert np.array_equal(np.hstack(parts), joint)


class TestUpdates:
    def test_m1_direct_formula(self):
        p = initial_params(1, 1.0, np.eye(1))
        new = update_m1(p, np.array([[1.0], [3.0]]), 0.0)
        assert new.mean[0] == 2.0 and new.covariance()[0, 0] == pytest.approx(1.0)

    def test_m1_momentum_mean(self):
        p = initial_params(1, 1.0, np.eye(1))
        new = update_m1(p, np.array([[9.0], [11.0]]), 0.1)
        assert new.mean[0] == pytest.approx(9.0)

    def test_m1_keeps_correlation(self, rng):
        corr = colored_correlation(NoiseColorSpec(1.0, 5))
        p = initial_params(5, 2.0, corr)
        new = update_m1(p, rng.standard_normal((4, 5)), 0.3)
        assert new.cov_model.corr is p.cov_model.corr
        assert new.cov_model.corr.tobytes() == corr.tobytes()

    def test_m1_variance_momentum_option(self):
        p = initial_params(1, 2.0, np.eye(1))
        new = update_m1(p, np.array([[-1.0], [1.0]]), 0.5, momentum_on="var")
        assert new.covariance()[0, 0] == pytest.approx(0.5 * 4 + 0.5 * 1)

    def test_m1_floor_on_identical_elites(self):
        p = initial_params(2, 1.0, np.eye(2))
        new = update_m1(p, np.ones((3, 2)), 0.0, sigma_floor=1e-6)
        assert np.all(new.cov_model.sigmas == 1e-6)

    def test_m2_direct_formula(self):
        p = initial_params(1, 1.0, np.eye(1), full=True)
        new = update_m2(p, np.array([[0.0], [2.0]]), 0.0)
        assert new.mean[0] == 1.0 and new.covariance()[0, 0] == pytest.approx(1.0)

    def test_m2_collinear_elites_repaired(self):
        p = initial_params(2, 1.0, np.eye(2), full=True)
        elites = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]])
        with pytest.warns(RuntimeWarning, match="jitter"):
            new = update_m2(p, elites, 0.0)
        cov = new.covariance()
        assert np.linalg.eigvalsh(cov)[0] >= 1e-10 * np.trace(cov) / 2 * (1 - 1e-9)

    def test_m2_needs_enough_elites(self):
        with pytest.raises(ValueError):
            update_m2(initial_params(3, 1.0, np.eye(3), full=True), np.zeros((3, 3)), 0.0)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2**31))
    def test_alpha_one_is_identity(self, seed):
        g = np.random.default_rng(seed)
        corr = colored_correlation(NoiseColorSpec(0.5, 4))
        p1 = ProposalParams(g.standard_normal(4), FixedCorrelation.build(corr, g.uniform(0.5, 2, 4)))
        e = g.standard_normal((6, 4))
        q1 = update_m1(p1, e, 1.0)
        assert np.array_equal(q1.mean, p1.mean) and np.array_equal(q1.cov_model.sigmas, p1.cov_model.sigmas)
        p2 = ProposalParams(p1.mean, FullCovariance(p1.covariance()))
        q2 = update_m2(p2, e, 1.0)
        assert np.array_equal(q2.mean, p2.mean) and np.allclose(q2.covariance(), p2.covariance(), rtol=0, atol=1e-15)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2**31))
    def test_alpha_zero_is_mle(self, seed):
        g = np.random.default_rng(seed)
        e = g.standard_normal((8, 3))
        q = update_m2(initial_params(3, 1.0, np.eye(3), full=True), e, 0.0)
        mu = e.mean(axis=0)
        assert np.allclose(q.mean, mu) and np.allclose(q.covariance(), np.cov(e, rowvar=False, bias=True))
        q1 = update_m1(initial_params(3, 1.0, np.eye(3)), e, 0.0)
        assert np.allclose(q1.cov_model.sigmas, e.std(axis=0))
