import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from marglik.gaussians import (
    FactorizationError,
    Gaussian1D,
    GaussianND,
    jittered_cholesky,
    kl_gaussian_nd,
    log_density_1d,
    log_mean_exp,
    sample_mvn,
)

# Oracle for the 1-D log density: explicit formula evaluated with mpmath-free
# double arithmetic; the frozen constants below were computed from it.
HALF_LOG_2PI = 0.9189385332046727  # 0.5 * ln(2 pi)
HALF_LOG_4PI = 1.2655121234846454  # 0.5 * ln(4 pi)


class TestLogDensity1d:
    def test_standard_normal_at_zero(self):
        assert log_density_1d(Gaussian1D(0.0, 1.0), 0.0) == pytest.approx(-HALF_LOG_2PI, abs=1e-12)

    def test_variance_two_at_zero(self):
        assert log_density_1d(Gaussian1D(0.0, 2.0), 0.0) == pytest.approx(-HALF_LOG_4PI, abs=1e-12)

    def test_zero_residual_symmetry(self):
        assert log_density_1d(Gaussian1D(3.0, 1.0), 3.0) == pytest.approx(-HALF_LOG_2PI, abs=1e-12)

    def test_rejects_nonpositive_variance(self):
        with pytest.raises(ValueError):
            Gaussian1D(0.0, 0.0)
        with pytest.raises(ValueError):
            Gaussian1D(0.0, -1.0)

    @pytest.mark.parametrize("mean,var", [(0.0, 1.0), (2.0, 0.3), (-1.5, 7.0)])
    def test_integrates_to_one(self, mean, var):
        sd = np.sqrt(var)
        ys = np.linspace(mean - 8 * sd, mean + 8 * sd, 20001)
        dens = np.exp([log_density_1d(Gaussian1D(mean, var), y) for y in ys])
        assert np.trapezoid(dens, ys) == pytest.approx(1.0, abs=1e-6)


def _quadrature_kl(p_mean, p_var, q_mean, q_var):
    """Independent 1-D KL oracle: trapezoid integral of p log(p/q) over +-12 sd."""
    sd = np.sqrt(max(p_var, q_var))
    xs = np.linspace(min(p_mean, q_mean) - 12 * sd, max(p_mean, q_mean) + 12 * sd, 40001)
    logp = -0.5 * (xs - p_mean) ** 2 / p_var - 0.5 * np.log(2 * np.pi * p_var)
    logq = -0.5 * (xs - q_mean) ** 2 / q_var - 0.5 * np.log(2 * np.pi * q_var)
    return float(np.trapezoid(np.exp(logp) * (logp - logq), xs))


class TestKlGaussian:
    def test_identical_is_zero(self, rng):
        cov = rng.standard_normal((3, 3))
        cov = cov @ cov.T + np.eye(3)
        g = GaussianND(rng.standard_normal(3), cov)
        assert kl_gaussian_nd(g, g) == 0.0

    def test_scalar_mean_shift(self):
        p = GaussianND([0.0], [[1.0]])
        q = GaussianND([1.0], [[1.0]])
        assert kl_gaussian_nd(p, q) == pytest.approx(0.5, abs=1e-12)

    def test_scalar_variance_ratio(self):
        p = GaussianND([0.0], [[2.0]])
        q = GaussianND([0.0], [[1.0]])
        # 0.5 * (2 - 1 - ln 2)
        assert kl_gaussian_nd(p, q) == pytest.approx(0.15342640972002752, abs=1e-10)

    def test_scalar_posterior_step_value(self):
        # KL(N(0,1) || N(1, 0.5)); quadrature oracle pins the closed form.
        p = GaussianND([0.0], [[1.0]])
        q = GaussianND([1.0], [[0.5]])
        val = kl_gaussian_nd(p, q)
        assert val == pytest.approx(1.1534264097200273, abs=1e-10)
        assert val == pytest.approx(_quadrature_kl(0.0, 1.0, 1.0, 0.5), abs=1e-5)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            kl_gaussian_nd(GaussianND([0.0], [[1.0]]), GaussianND([0.0, 0.0], np.eye(2)))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_nonnegative_on_random_spd_pairs(self, seed):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(1, 5))
        a = rng.standard_normal((d, d))
        b = rng.standard_normal((d, d))
        p = GaussianND(rng.standard_normal(d), a @ a.T + 0.1 * np.eye(d))
        q = GaussianND(rng.standard_normal(d), b @ b.T + 0.1 * np.eye(d))
        assert kl_gaussian_nd(p, q) >= 0.0

    def test_zero_iff_equal_within_tolerance(self, rng):
        cov = np.eye(2)
        p = GaussianND([0.0, 0.0], cov)
        q = GaussianND([1e-4, 0.0], cov)
        assert kl_gaussian_nd(p, q) > 0.0


class TestLogMeanExp:
    def test_single_element_identity(self):
        assert log_mean_exp([-1.0]) == -1.0

    def test_constant_sequence_exact(self):
        v = float(np.log(2.0))
        assert log_mean_exp([v, v]) == v
        assert log_mean_exp([v] * 7) == v

    def test_dominated_term(self):
        got = log_mean_exp([0.0, -700.0])
        assert abs(got - (-0.6931471805599453)) < 1e-12

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            log_mean_exp([])

    def test_all_neg_inf(self):
        assert log_mean_exp([-np.inf, -np.inf]) == -np.inf

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-100, 100), st.integers(1, 20))
    def test_constant_property(self, v, k):
        assert log_mean_exp([v] * k) == v


class TestSampleMvn:
    def test_degenerate_covariance_returns_mean(self, rng):
        g = GaussianND([2.0, -3.0], 1e-30 * np.eye(2))
        s = sample_mvn(g, rng)
        assert np.max(np.abs(s - g.mean)) < 1e-10

    def test_seed_determinism(self):
        g = GaussianND([0.0, 1.0], [[2.0, 0.5], [0.5, 1.0]])
        a = sample_mvn(g, np.random.default_rng(99))
        b = sample_mvn(g, np.random.default_rng(99))
        assert np.array_equal(a, b)

    def test_empirical_covariance(self):
        g = GaussianND([0.0, 0.0], np.eye(2))
        rng = np.random.default_rng(5)
        draws = np.array([sample_mvn(g, rng) for _ in range(100_000)])
        emp = np.cov(draws.T)
        assert np.max(np.abs(emp - np.eye(2))) < 0.05


class TestJitteredCholesky:
    def test_clean_matrix_untouched(self):
        cov = np.diag([4.0, 9.0])
        L = jittered_cholesky(cov)
        assert np.array_equal(L, np.diag([2.0, 3.0]))

    def test_marginally_indefinite_recovers(self):
        # rank-1 matrix: bare Cholesky fails, jitter makes it pass
        v = np.array([1.0, 1.0])
        L = jittered_cholesky(np.outer(v, v))
        assert np.all(np.isfinite(L))

    def test_hopeless_matrix_raises(self):
        with pytest.raises(FactorizationError):
            jittered_cholesky(np.array([[1.0, 0.0], [0.0, -5.0]]))

    def test_asymmetric_covariance_rejected(self):
        with pytest.raises(ValueError):
            GaussianND([0.0, 0.0], [[1.0, 0.5], [0.2, 1.0]])
