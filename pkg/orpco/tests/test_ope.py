"""Tests for propensities, reward prediction and the off-policy estimators."""

import numpy as np
import pytest

from orpco import ConfigError, ModelStateError, OpeReport, RewardPredictor, SyntheticBandit
from orpco import estimate_dm, estimate_dr, estimate_ips, estimate_wis, evaluate_ope, fit_logging_propensity
from orpco import fit_target_propensity
from orpco.config import GpnConfig, OpeConfig
from orpco.function_approx import Mlp, MlpSpec
from orpco.ope import (
    DiagonalGaussian,
    PropensityModel,
    TargetPropensity,
    compute_weights,
    effective_sample_size,
    ope_report,
)
from orpco.reward_eval import RewardFunction
from orpco.synthetic import toy_dataset


def first_result():
    return RewardFunction("y0", lambda y: y[:, 0])


class NoisyConstantPolicy:
    def __init__(self, value, spread=0.01):
        self.value = value
        self.spread = spread

    def choose(self, x, seed):
        return np.array([self.value + self.spread * np.random.default_rng(seed).standard_normal()])


@pytest.fixture(scope="module")
def toy():
    return toy_dataset("double", 400, seed=0)


@pytest.fixture(scope="module")
def predictor(toy):
    config = OpeConfig(predictor_hidden=[16], predictor_epochs=150, predictor_lr=1e-2, predictor_batch_size=64)
    return RewardPredictor.fit(toy, first_result(), config, seed=0)


@pytest.fixture(scope="module")
def propensity(toy):
    config = GpnConfig(hidden_layers=1, hidden_dim=8, epochs=100, lr=1e-2, batch_size=64)
    return fit_logging_propensity(toy, config, seed=0)


class TestEstimators:
    def test_ips_single_record(self):
        assert estimate_ips(np.array([2.0]), np.array([1.0])) == 2.0

    def test_wis_self_normalizes(self):
        assert estimate_wis(np.array([1.0, 3.0]), np.array([0.0, 1.0])) == pytest.approx(0.75)

    def test_wis_needs_positive_weights(self):
        with pytest.raises(ValueError, match="positive weight sum"):
            estimate_wis(np.zeros(3), np.ones(3))

    def test_dm_is_mean_prediction(self):
        assert estimate_dm(np.array([0.2, 0.4])) == pytest.approx(0.3)

    def test_dr_reduces_to_dm_without_weights(self):
        at_policy = np.array([0.3, 0.9])
        assert estimate_dr(at_policy, np.array([5.0, -1.0]), np.zeros(2), np.ones(2)) == estimate_dm(at_policy)

    def test_dr_reduces_to_ips_with_zero_model(self):
        w, r = np.array([0.5, 2.0, 1.5]), np.array([1.0, 0.0, 3.0])
        assert estimate_dr(np.zeros(3), np.zeros(3), w, r) == pytest.approx(estimate_ips(w, r))

    def test_weights(self):
        np.testing.assert_allclose(compute_weights([0.4, 1.0], [0.2, 4.0]), [2.0, 0.25])
        with pytest.raises(ValueError, match="must be positive"):
            compute_weights([1.0], [0.0])

    def test_effective_sample_size(self):
        assert effective_sample_size(np.ones(10)) == pytest.approx(10.0)
        assert effective_sample_size(np.array([1e6, 1.0, 1.0])) == pytest.approx(1.0, abs=1e-3)


class TestOpeReport:
    def test_capped_copy_is_diagnostic_only(self):
        weights, rewards = np.array([1.0, 300.0]), np.array([1.0, 1.0])
        report = ope_report(np.ones(2), np.ones(2), weights, rewards, weight_cap=100.0)
        assert report.ips == pytest.approx(150.5)
        assert report.capped["ips"] == pytest.approx(50.5)
        assert report.n_capped == 1
        assert report.max_weight == 300.0

    def test_to_dict(self):
        report = ope_report(np.ones(2), np.ones(2), np.ones(2), np.zeros(2))
        data = report.to_dict()
        assert isinstance(report, OpeReport)
        assert data["n_records"] == 2
        assert data["true"] is None
        assert set(data["capped"]) == {"ips", "wis", "dr"}


class TestTargetPropensity:
    def test_gaussian_density(self):
        g = DiagonalGaussian(np.zeros(2), np.ones(2))
        assert g.density(np.zeros(2)) == pytest.approx(1.0 / (2.0 * np.pi))

    def test_density_floor(self):
        g = DiagonalGaussian(np.zeros(1), np.full(1, 1e-4))
        assert g.density(np.array([5.0]), floor=1e-6) == 1e-6

    def test_deterministic_policy_hits_variance_floor(self):
        class Fixed:
            def choose(self, x, seed):
                return np.array([0.3, 0.6])

        g = fit_target_propensity(Fixed(), np.zeros(1), n_repeats=5, variance_floor=1e-6)
        np.testing.assert_allclose(g.mean, [0.3, 0.6])
        np.testing.assert_allclose(g.var, [1e-6, 1e-6])

    def test_needs_two_repeats(self):
        with pytest.raises(ValueError, match="n_repeats"):
            fit_target_propensity(NoisyConstantPolicy(0.5), np.zeros(1), n_repeats=1)

    def test_row_count_checked(self):
        target = TargetPropensity([DiagonalGaussian(np.zeros(1), np.ones(1))])
        with pytest.raises(ValueError, match="expected 1 rows"):
            target.density(np.zeros((2, 1)), np.zeros((2, 1)))

    def test_base_model_is_abstract(self):
        with pytest.raises(TypeError, match="abstract"):
            PropensityModel()


class TestLoggingPropensity:
    def test_uniform_controls(self, propensity):
        mean, var = propensity.moments(np.full((3, 1), 0.5))
        np.testing.assert_allclose(mean, 0.5, atol=0.1)
        np.testing.assert_allclose(var, 1.0 / 12.0, rtol=0.35)

    def test_density_positive(self, propensity):
        density = propensity.density(np.full((4, 1), 0.5), np.linspace(0.0, 1.0, 4).reshape(-1, 1))
        assert np.all(density >= propensity.density_floor)

    def test_empty_dataset(self, toy):
        with pytest.raises(ConfigError, match="empty dataset"):
            fit_logging_propensity(toy.subset([]), GpnConfig(), seed=0)


class TestRewardPredictor:
    def test_untrained(self, toy):
        net = Mlp(MlpSpec(2, (4,), 1))
        with pytest.raises(ModelStateError, match="not trained"):
            RewardPredictor(net, toy.normalizer).predict([[0.5]], [[0.5]])

    def test_learns_linear_reward(self, predictor):
        predicted = predictor.predict(np.full((3, 1), 0.5), np.array([[0.2], [0.5], [0.8]]))
        np.testing.assert_allclose(predicted, [0.4, 1.0, 1.6], atol=0.15)


class TestEvaluateOpe:
    def test_report_on_toy_process(self, toy, predictor, propensity):
        config = OpeConfig(n_repeats=3, max_records=40)
        report = evaluate_ope(toy, NoisyConstantPolicy(0.5), first_result(), propensity, predictor, config, seed=0)
        assert len(report.weights) == 40
        assert report.dm == pytest.approx(1.0, abs=0.15)
        assert np.all(report.weights >= 0)

    def test_deterministic(self, toy, predictor, propensity):
        config = OpeConfig(n_repeats=3, max_records=10)
        a = evaluate_ope(toy, NoisyConstantPolicy(0.4), first_result(), propensity, predictor, config, seed=2)
        b = evaluate_ope(toy, NoisyConstantPolicy(0.4), first_result(), propensity, predictor, config, seed=2)
        assert (a.dm, a.ips, a.wis, a.dr) == (b.dm, b.ips, b.wis, b.dr)

    def test_empty_test_split(self, toy, predictor, propensity):
        with pytest.raises(ConfigError, match="non-empty test split"):
            evaluate_ope(toy.subset([]), NoisyConstantPolicy(0.5), first_result(), propensity, predictor, OpeConfig(), 0)


class TestKnownValueBandit:
    """Estimators against a bandit whose target value is known in closed form."""

    @pytest.fixture(scope="class")
    def logged(self):
        bandit = SyntheticBandit()
        rng = np.random.default_rng(0)
        data = bandit.sample(20000, rng)
        u_target = data["x"] + bandit.offset_target + bandit.sigma_target * rng.standard_normal(20000)
        weights = bandit.target_density(data["x"], data["u"]) / bandit.log_density(data["x"], data["u"])
        return bandit, data, u_target, weights

    def test_ips_and_wis(self, logged):
        bandit, data, _, weights = logged
        assert estimate_ips(weights, data["reward"]) == pytest.approx(bandit.true_value(), abs=0.05)
        assert estimate_wis(weights, data["reward"]) == pytest.approx(bandit.true_value(), abs=0.05)

    def test_dr_with_exact_model(self, logged):
        bandit, data, u_target, weights = logged
        value = estimate_dr(
            bandit.expected_reward(data["x"], u_target),
            bandit.expected_reward(data["x"], data["u"]),
            weights,
            data["reward"],
        )
        assert value == pytest.approx(bandit.true_value(), abs=0.02)

    def test_dm_with_biased_model(self, logged):
        bandit, data, u_target, _ = logged
        biased = bandit.expected_reward(data["x"], u_target) + 0.2
        assert estimate_dm(biased) == pytest.approx(bandit.true_value() + 0.2, abs=0.01)
