import numpy as np
import pytest

from conftest import random_instance
from marglik import (
    BlrModel,
    Dataset,
    EvidenceReport,
    GdConfig,
    exact_log_evidence,
    exact_report,
    l_hat,
    l_hat_k,
    l_hat_s,
    posterior_step_kl,
    prop1_bias_check,
    run_trajectories,
    sample_posterior_predictions,
    sequential_log_evidence,
    sotl_report,
)

LOG_2PI = np.log(2 * np.pi)


def exact_lower_bound(model, data):
    """L(D) = log P(D) - sum_i KL(post_{<i} || post_{<=i}); the estimators' target."""
    kl = sum(posterior_step_kl(model, data, i) for i in range(1, data.n + 1))
    return exact_log_evidence(model, data) - kl


class TestEvidenceReport:
    def test_value_must_match_per_point(self):
        with pytest.raises(ValueError):
            EvidenceReport("l_hat", 5.0, np.array([1.0, 2.0]), 1, 0, "m")

    def test_exact_kinds_need_zero_k(self):
        with pytest.raises(ValueError):
            EvidenceReport("exact", 1.0, np.array([1.0]), 3, 0, "m")

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            EvidenceReport("bogus", 1.0, np.array([1.0]), 1, 0, "m")

    def test_json_dict(self):
        rep = EvidenceReport("l_hat", 3.0, np.array([1.0, 2.0]), 2, 7, "m", stderr=0.1)
        d = rep.to_dict()
        assert d["kind"] == "l_hat" and d["k"] == 2 and d["seed"] == 7
        assert d["stderr"] == pytest.approx(0.1)
        assert d["per_point"] == [1.0, 2.0]


class TestLhat:
    def test_matches_sotl_identity_k1(self, scalar_instance):
        model, data = scalar_instance
        samples, records = run_trajectories(model, data, 1, GdConfig(), master_seed=9)
        rep = l_hat(samples, data, model.noise_variance)
        via_losses = -records[0].total - data.n / 2 * np.log(2 * np.pi * model.noise_variance)
        assert rep.value == pytest.approx(via_losses, rel=1e-12)

    def test_identical_samples_collapse(self):
        F = np.full((3, 5), 0.7)
        y = np.array([1.0, 0.5, 0.7])
        rep = l_hat(F, y, 0.3)
        rep1 = l_hat(F[:, :1], y, 0.3)
        assert rep.value == pytest.approx(rep1.value, rel=1e-12)

    def test_monte_carlo_hits_exact_bound(self, scalar_instance):
        model, data = scalar_instance
        rng = np.random.default_rng(0)
        F = sample_posterior_predictions(model, data, 5000, rng)
        rep = l_hat(F, data, model.noise_variance)
        target = exact_lower_bound(model, data)
        assert abs(rep.value - target) <= 3 * rep.stderr

    def test_requires_matching_targets(self):
        with pytest.raises(ValueError):
            l_hat(np.zeros((3, 2)), np.zeros(4), 1.0)


class TestLhatK:
    def test_k1_bitwise_equal_to_lhat(self, rng):
        F = rng.standard_normal((6, 1))
        y = rng.standard_normal(6)
        a = l_hat(F, y, 0.5)
        b = l_hat_k(F, y, 0.5)
        assert a.value == b.value
        assert np.array_equal(a.per_point, b.per_point)

    def test_dominates_lhat(self, rng):
        # log-mean-exp >= mean of logs per point, so the totals order as well
        F = rng.standard_normal((5, 20))
        y = rng.standard_normal(5)
        assert l_hat_k(F, y, 0.7).value >= l_hat(F, y, 0.7).value

    def test_paired_k_monotone_in_expectation(self, scalar_instance):
        model, data = scalar_instance
        ks = (1, 2, 5, 10, 50)
        reps = 500
        rng = np.random.default_rng(12)
        means = {k: [] for k in ks}
        for _ in range(reps):
            F = sample_posterior_predictions(model, data, max(ks), rng)
            for k in ks:
                means[k].append(l_hat_k(F[:, :k], data, model.noise_variance).value)
        avg = [np.mean(means[k]) for k in ks]
        assert all(a <= b for a, b in zip(avg, avg[1:]))

    def test_mean_below_exact_evidence(self, scalar_instance):
        model, data = scalar_instance
        rng = np.random.default_rng(5)
        vals = []
        for _ in range(500):
            F = sample_posterior_predictions(model, data, 10, rng)
            vals.append(l_hat_k(F, data, model.noise_variance).value)
        mean = np.mean(vals)
        se = np.std(vals, ddof=1) / np.sqrt(len(vals))
        assert mean <= exact_log_evidence(model, data) + 3 * se


class TestLhatS:
    def test_needs_two_samples(self, scalar_instance):
        model, data = scalar_instance
        with pytest.raises(ValueError):
            l_hat_s(np.zeros((data.n, 1)), data, 1.0, noise_rng=np.random.default_rng(0))

    def test_degenerate_draws_flagged(self):
        F = np.ones((2, 4))
        y = np.array([1.0, 1.0])
        rep = l_hat_s(F, y, 0.5, predictions_include_noise=True)
        assert rep.degenerate_points == (0, 1)
        assert rep.value > 0  # variance floor turns exact hits into large spikes

    def test_consistency_with_sequential(self, scalar_instance):
        model, data = scalar_instance
        seq = sequential_log_evidence(model, data).value
        rng = np.random.default_rng(8)
        vals = []
        for _ in range(50):
            Fn = sample_posterior_predictions(model, data, 5000, rng, include_noise=True)
            vals.append(l_hat_s(Fn, data, model.noise_variance, predictions_include_noise=True).value)
        mean = np.mean(vals)
        se = np.std(vals, ddof=1) / np.sqrt(len(vals))
        assert abs(mean - seq) <= 3 * se

    def test_mean_below_exact_evidence(self, scalar_instance):
        model, data = scalar_instance
        rng = np.random.default_rng(21)
        vals = []
        for _ in range(500):
            Fn = sample_posterior_predictions(model, data, 10, rng, include_noise=True)
            vals.append(l_hat_s(Fn, data, model.noise_variance, predictions_include_noise=True).value)
        mean = np.mean(vals)
        se = np.std(vals, ddof=1) / np.sqrt(len(vals))
        assert mean <= exact_log_evidence(model, data) + 3 * se

    def test_trajectory_noise_stream_reproducible(self, scalar_instance):
        model, data = scalar_instance
        samples, _ = run_trajectories(model, data, 8, GdConfig(), master_seed=4)
        a = l_hat_s(samples, data, model.noise_variance)
        b = l_hat_s(samples, data, model.noise_variance)
        assert a.value == b.value


class TestSotlReport:
    def test_zero_residual_value(self):
        from marglik.sto import SumLossRecord

        rec = SumLossRecord(np.zeros(4), 0.0)
        rep = sotl_report(rec, 0.5, 4)
        assert rep.value == pytest.approx(-2 * np.log(2 * np.pi * 0.5))

    def test_equals_lhat_on_same_trajectory(self, scalar_instance):
        model, data = scalar_instance
        samples, records = run_trajectories(model, data, 1, GdConfig(), master_seed=13)
        a = sotl_report(records[0], model.noise_variance, data.n)
        b = l_hat(samples, data, model.noise_variance)
        assert a.value == pytest.approx(b.value, rel=1e-12)

    def test_trajectory_average_hits_bound(self, scalar_instance):
        model, data = scalar_instance
        _, records = run_trajectories(model, data, 2000, GdConfig(), master_seed=6)
        vals = [sotl_report(r, model.noise_variance, data.n).value for r in records]
        mean = np.mean(vals)
        se = np.std(vals, ddof=1) / np.sqrt(len(vals))
        assert abs(mean - exact_lower_bound(model, data)) <= 3 * se


class TestProp1Check:
    def test_single_point_identity(self):
        model = BlrModel.isotropic(1)
        data = Dataset([[1.0]], [0.0])
        chk = prop1_bias_check(model, data, 5000, seed=3)
        expected_rhs = exact_log_evidence(model, data) - posterior_step_kl(model, data, 1)
        assert chk.rhs == pytest.approx(expected_rhs, rel=1e-12)
        assert abs(chk.lhs - chk.rhs) <= 3 * chk.lhs_stderr

    def test_uninformative_limit(self, rng):
        model = BlrModel.isotropic(2, 1.0, 1e10)
        data = Dataset(rng.standard_normal((4, 2)), rng.standard_normal(4))
        chk = prop1_bias_check(model, data, 200, seed=0)
        assert chk.kl_sum < 1e-8
        assert abs(chk.rhs - chk.exact) < 1e-8

    def test_random_instance_identity(self, rng):
        model, data = random_instance(rng, max_d=3, max_n=5, min_n=5)
        chk = prop1_bias_check(model, data, 5000, seed=17)
        assert abs(chk.lhs - chk.rhs) <= 3 * chk.lhs_stderr


class TestRankingFidelity:
    """Each estimator's mean ranks the candidate grid like the exact evidence."""

    @staticmethod
    def estimator_argmaxes(models, datasets, seed, reps=10, k=1000):
        n = datasets[0].n
        gen = np.random.default_rng(np.random.SeedSequence((seed, 55)))
        Z = gen.standard_normal((n, reps * k))  # shared across models
        Zn = gen.standard_normal((n, reps * k))
        means = {e: [] for e in ("exact", "l_hat", "l_hat_k", "l_hat_s")}
        for model, data in zip(models, datasets):
            means["exact"].append(exact_log_evidence(model, data))
            from marglik.blr import one_step_predictive_params

            mu, lat = one_step_predictive_params(model, data)
            nv = model.noise_variance
            F = mu[:, None] + np.sqrt(lat)[:, None] * Z
            Fn = mu[:, None] + np.sqrt(lat + nv)[:, None] * Zn
            vals = {"l_hat": [], "l_hat_k": [], "l_hat_s": []}
            for r in range(reps):
                sl = slice(r * k, (r + 1) * k)
                vals["l_hat"].append(l_hat(F[:, sl], data, nv).value)
                vals["l_hat_k"].append(l_hat_k(F[:, sl], data, nv).value)
                vals["l_hat_s"].append(l_hat_s(Fn[:, sl], data, nv, predictions_include_noise=True).value)
            for e, v in vals.items():
                means[e].append(np.mean(v))
        return {e: int(np.argmax(v)) for e, v in means.items()}

    def test_prior_variance_task(self):
        from marglik.datasets import gen_prior_variance_task

        grid = [1 / 256, 1 / 16, 1.0, 16.0, 256.0]
        for seed in range(3):
            data, models = gen_prior_variance_task(300, 8, 1.0, 2.5, seed, variance_grid=grid)
            am = self.estimator_argmaxes(models, [data] * len(models), seed)
            assert am["l_hat"] == am["exact"]
            assert am["l_hat_k"] == am["exact"]
            assert am["l_hat_s"] == am["exact"]

    def test_rff_frequency_task(self, tmp_path):
        from idx_fixture import write_idx_fixture
        from marglik.datasets import RffConfig, filter_binary, load_mnist_idx, rff_embed

        ip, lp = write_idx_fixture(str(tmp_path))
        X, labels = load_mnist_idx(ip, lp)
        Xb, y = filter_binary(X, labels)
        Xb, y = Xb[:60], y[:60]
        for seed in range(3):
            rff_seed = int(np.random.SeedSequence((seed, 0xF)).generate_state(1)[0])
            models, datasets = [], []
            for f in (0.003, 0.03, 0.3, 3.0):
                phi = rff_embed(Xb, RffConfig(32, f, rff_seed))
                models.append(BlrModel.isotropic(32, 1.0, 0.1))
                datasets.append(Dataset(phi, y))
            am = self.estimator_argmaxes(models, datasets, seed)
            assert am["l_hat"] == am["exact"]
            assert am["l_hat_k"] == am["exact"]
            assert am["l_hat_s"] == am["exact"]


class TestExactReport:
    def test_per_point_sums_to_closed_form(self, rng):
        model, data = random_instance(rng, min_n=4)
        rep = exact_report(model, data)
        assert rep.kind == "exact" and rep.k == 0
        assert abs(rep.value - exact_log_evidence(model, data)) <= 1e-10 * max(1.0, abs(rep.value))

    def test_matches_sequential_contributions(self, rng):
        model, data = random_instance(rng, min_n=3)
        a = exact_report(model, data)
        b = sequential_log_evidence(model, data)
        np.testing.assert_allclose(a.per_point, b.per_point, rtol=1e-7, atol=1e-9)
