import numpy as np
import pytest

from conftest import random_instance
from marglik import (
    BlrModel,
    Dataset,
    condition,
    exact_log_evidence,
    posterior_step_kl,
    predictive,
    sequential_log_evidence,
)
from marglik.blr import sequential_log_evidence_naive


class TestDataset:
    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            Dataset([[np.nan]], [0.0])

    def test_rejects_mismatched_targets(self):
        with pytest.raises(ValueError):
            Dataset([[1.0], [2.0]], [1.0])

    def test_csv_round_trip(self, tmp_path, rng):
        data = Dataset(rng.standard_normal((5, 3)), rng.standard_normal(5))
        path = tmp_path / "data.csv"
        data.to_csv(path)
        loaded = Dataset.from_csv(path)
        np.testing.assert_array_equal(loaded.features, data.features)
        np.testing.assert_array_equal(loaded.targets, data.targets)

    def test_csv_header_checked(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1.0,2.0\n")
        with pytest.raises(ValueError):
            Dataset.from_csv(path)

    def test_csv_byte_determinism(self, rng):
        data = Dataset(rng.standard_normal((4, 2)), rng.standard_normal(4))
        assert data.to_csv() == data.to_csv()


class TestCondition:
    def test_empty_prefix_is_prior(self):
        model = BlrModel(np.array([0.5, -1.0]), 2.0, 1.0)
        data = Dataset([[1.0, 0.0]], [1.0])
        state = condition(model, data, 0)
        np.testing.assert_array_equal(state.weight_posterior.mean, model.prior_mean)
        np.testing.assert_array_equal(state.weight_posterior.covariance, 2.0 * np.eye(2))

    def test_scalar_conjugate_update(self, scalar_instance):
        model, data = scalar_instance
        state = condition(model, data, 1)
        assert state.weight_posterior.mean[0] == pytest.approx(1.0, abs=1e-12)
        assert state.weight_posterior.covariance[0, 0] == pytest.approx(0.5, abs=1e-12)

    def test_recompute_identical(self, rng):
        model, data = random_instance(rng)
        a = condition(model, data, data.n)
        b = condition(model, data, data.n)
        np.testing.assert_array_equal(a.weight_posterior.mean, b.weight_posterior.mean)
        np.testing.assert_array_equal(a.weight_posterior.covariance, b.weight_posterior.covariance)

    def test_prefix_out_of_range(self, scalar_instance):
        model, data = scalar_instance
        with pytest.raises(ValueError):
            condition(model, data, data.n + 1)

    def test_nonzero_prior_mean_shift(self, rng):
        # shifted-target route must match the direct normal-equation posterior
        d, n = 3, 10
        X = rng.standard_normal((n, d))
        y = rng.standard_normal(n)
        mu0 = rng.standard_normal(d)
        model = BlrModel(mu0, 1.7, 0.6)
        state = condition(model, Dataset(X, y), n)
        P = np.eye(d) / 1.7 + X.T @ X / 0.6
        cov = np.linalg.inv(P)
        mu = cov @ (mu0 / 1.7 + X.T @ y / 0.6)
        np.testing.assert_allclose(state.weight_posterior.mean, mu, rtol=1e-9)
        np.testing.assert_allclose(state.weight_posterior.covariance, cov, rtol=1e-9)

    def test_covariance_eigenvalues_shrink(self, rng):
        model, data = random_instance(rng, min_n=6)
        prev = None
        for i in range(data.n + 1):
            eig = np.linalg.eigvalsh(condition(model, data, i).weight_posterior.covariance)
            if prev is not None:
                assert np.all(eig <= prev + 1e-10)
            prev = eig


class TestPredictive:
    def test_prior_predictive(self):
        model = BlrModel.isotropic(1)
        data = Dataset([[1.0]], [0.0])
        g = predictive(condition(model, data, 0), np.array([1.0]), 1.0)
        assert (g.mean, g.variance) == (0.0, 2.0)

    def test_posterior_predictive(self, scalar_instance):
        model, data = scalar_instance
        g = predictive(condition(model, data, 1), np.array([1.0]), 1.0)
        assert g.mean == pytest.approx(1.0, abs=1e-12)
        assert g.variance == pytest.approx(1.5, abs=1e-12)

    def test_zero_feature_vector(self, scalar_instance):
        model, data = scalar_instance
        g = predictive(condition(model, data, 1), np.array([0.0]), 1.0)
        assert (g.mean, g.variance) == (0.0, 1.0)

    def test_dimension_mismatch(self, scalar_instance):
        model, data = scalar_instance
        with pytest.raises(ValueError):
            predictive(condition(model, data, 1), np.array([1.0, 2.0]), 1.0)


class TestEvidence:
    def test_single_point_value(self):
        model = BlrModel.isotropic(1)
        data = Dataset([[1.0]], [0.0])
        assert sequential_log_evidence(model, data).value == pytest.approx(-1.2655121234846454, abs=1e-9)
        assert exact_log_evidence(model, data) == pytest.approx(-1.2655121234846454, abs=1e-9)

    def test_oracle_equivalence_random_instances(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            model, data = random_instance(rng)
            seq = sequential_log_evidence(model, data)
            ex = exact_log_evidence(model, data)
            assert abs(seq.value - ex) <= 1e-8 * max(1.0, abs(ex))
            assert seq.per_point.sum() == pytest.approx(seq.value, abs=1e-10 * max(1, abs(seq.value)))

    def test_naive_sweep_agrees(self, rng):
        model, data = random_instance(rng, min_n=4)
        fast = sequential_log_evidence(model, data)
        slow = sequential_log_evidence_naive(model, data)
        np.testing.assert_allclose(fast.per_point, slow.per_point, rtol=1e-8, atol=1e-10)

    def test_permutation_invariance_of_total(self, rng):
        model, data = random_instance(rng, min_n=5)
        ex = exact_log_evidence(model, data)
        for _ in range(3):
            perm = rng.permutation(data.n)
            seq = sequential_log_evidence(model, data.permuted(perm))
            assert abs(seq.value - ex) <= 1e-8 * max(1.0, abs(ex))

    def test_degenerate_prior_reduces_to_noise_model(self):
        # prior variance ~ 0 with zero mean: predictions are pure noise draws
        model = BlrModel.isotropic(2, 1e-18, 0.7)
        rng = np.random.default_rng(0)
        data = Dataset(rng.standard_normal((6, 2)), rng.standard_normal(6))
        expected = float(
            np.sum(-0.5 * data.targets**2 / 0.7 - 0.5 * np.log(2 * np.pi * 0.7))
        )
        assert sequential_log_evidence(model, data).value == pytest.approx(expected, rel=1e-8)

    def test_zero_features_ignore_prior(self, rng):
        model = BlrModel.isotropic(2, 3.0, 0.7)
        y = rng.standard_normal(5)
        data = Dataset(np.zeros((5, 2)), y)
        expected = float(np.sum(-0.5 * y**2 / 0.7 - 0.5 * np.log(2 * np.pi * 0.7)))
        assert exact_log_evidence(model, data) == pytest.approx(expected, rel=1e-10)

    def test_duplicated_point_closed_form(self):
        # two copies of (x=1, y=1): marginal is N2((1,1); 0, [[2,1],[1,2]])
        model = BlrModel.isotropic(1)
        data = Dataset([[1.0], [1.0]], [1.0, 1.0])
        cov = np.array([[2.0, 1.0], [1.0, 2.0]])
        y = np.ones(2)
        expected = float(
            -0.5 * y @ np.linalg.solve(cov, y)
            - 0.5 * np.log(np.linalg.det(cov))
            - np.log(2 * np.pi)
        )
        assert exact_log_evidence(model, data) == pytest.approx(expected, abs=1e-10)


class TestPosteriorStepKl:
    def test_scalar_value(self, scalar_instance):
        model, data = scalar_instance
        # KL(N(0,1) || N(1, 0.5)) via the standard closed form
        assert posterior_step_kl(model, data, 1) == pytest.approx(1.1534264097200273, abs=1e-10)

    def test_uninformative_update_near_zero(self):
        model = BlrModel.isotropic(1, 1.0, 1e12)
        data = Dataset([[1.0], [1.0]], [1.0, 1.0])
        assert posterior_step_kl(model, data, 2) < 1e-9

    def test_nonnegative(self, rng):
        model, data = random_instance(rng, min_n=3)
        for i in range(1, data.n + 1):
            assert posterior_step_kl(model, data, i) >= 0.0

    def test_index_out_of_range(self, scalar_instance):
        model, data = scalar_instance
        with pytest.raises(ValueError):
            posterior_step_kl(model, data, 0)
        with pytest.raises(ValueError):
            posterior_step_kl(model, data, data.n + 1)
