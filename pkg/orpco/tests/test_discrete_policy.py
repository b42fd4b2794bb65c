"""Tests for the Bayesian-optimization control policy."""

import numpy as np
import pytest

from orpco import DiscretePolicy, EvaluationError, GeneratorSpec, GroundTruth, PenaltyCalibration
from orpco.config import BoConfig
from orpco.discrete_policy import (
    LoggingPolicy,
    TrialTrace,
    expected_improvement,
    policy_true_values,
    policy_value_logging,
    policy_value_true,
)
from orpco.reward_eval import Evaluator, tolerance_box_reward


@pytest.fixture
def bo():
    return BoConfig(n_init=5, n_iter=12, n_candidates=256, n_refine=2)


def bowl(centre):
    def objective(x, u, seed):
        return -float(np.sum((np.asarray(u) - centre) ** 2))

    return objective


class TestExpectedImprovement:
    def test_zero_when_certain(self):
        assert expected_improvement(np.array([5.0]), np.array([0.0]), best=1.0)[0] == 0.0

    def test_closed_form_at_best(self):
        # improvement 0: EI = std * pdf(0)
        ei = expected_improvement(np.array([1.0]), np.array([2.0]), best=1.0)
        assert ei[0] == pytest.approx(2.0 / np.sqrt(2.0 * np.pi))

    def test_increases_with_mean(self):
        ei = expected_improvement(np.array([0.0, 0.5, 1.0]), np.full(3, 0.3), best=0.5)
        assert np.all(np.diff(ei) > 0)

    def test_xi_lowers_improvement(self):
        base = expected_improvement(np.array([0.6]), np.array([0.1]), best=0.5)
        explore = expected_improvement(np.array([0.6]), np.array([0.1]), best=0.5, xi=0.2)
        assert explore[0] < base[0]


class TestTrialTrace:
    def test_ties_keep_earliest(self):
        trace = TrialTrace()
        for value in (0.1, 0.7, 0.7, 0.2):
            trace.add(np.zeros(1), value)
        assert trace.best_index == 1
        np.testing.assert_array_equal(trace.best_values, [0.1, 0.7, 0.7, 0.7])
        assert trace.to_dict()["best_index"] == 1


class TestDiscretePolicy:
    def test_invalid_bounds(self, bo):
        with pytest.raises(ValueError, match="lower < upper"):
            DiscretePolicy(bowl(0.5), [1.0], [0.0], bo)

    def test_trial_count_and_best(self, bo):
        policy = DiscretePolicy(bowl(0.3), [0.0], [1.0], bo)
        u, trace = policy.optimize_controls(np.zeros(1), seed=0)
        assert len(trace.values) == bo.n_init + bo.n_iter
        assert bowl(0.3)(None, u, 0) == max(trace.values)

    def test_finds_bowl_minimum(self, bo):
        policy = DiscretePolicy(bowl(np.array([0.3, 0.7])), [0.0, 0.0], [1.0, 1.0], bo)
        u, _ = policy.optimize_controls(np.zeros(1), seed=1)
        np.testing.assert_allclose(u, [0.3, 0.7], atol=0.1)

    def test_respects_scaled_bounds(self, bo):
        policy = DiscretePolicy(bowl(1.0), [-2.0], [2.0], bo)
        u, trace = policy.optimize_controls(np.zeros(1), seed=2)
        controls = np.asarray(trace.controls)
        assert controls.min() >= -2.0
        assert controls.max() <= 2.0
        assert u[0] == pytest.approx(1.0, abs=0.25)

    def test_deterministic(self, bo):
        policy = DiscretePolicy(bowl(0.4), [0.0], [1.0], bo)
        a, _ = policy.optimize_controls(np.zeros(1), seed=5)
        b, _ = policy.optimize_controls(np.zeros(1), seed=5)
        np.testing.assert_array_equal(a, b)

    def test_trials_share_evaluation_seed(self, bo):
        seeds = []

        def objective(x, u, seed):
            seeds.append(seed)
            return 0.0

        DiscretePolicy(objective, [0.0], [1.0], bo).optimize_controls(np.zeros(1), seed=0)
        assert len(set(seeds)) == 1

    def test_failing_objective_names_trial(self, bo):
        calls = []

        def objective(x, u, seed):
            calls.append(u)
            if len(calls) == 3:
                raise RuntimeError("sampler exploded")
            return 0.0

        with pytest.raises(EvaluationError, match="trial 2: sampler exploded") as info:
            DiscretePolicy(objective, [0.0], [1.0], bo).optimize_controls(np.zeros(1), seed=0)
        assert info.value.trial == 2

    def test_evaluator_objective(self, bo, make_ensemble):
        # member means follow u, so the box [0.5, 0.7] is hit around u = 0.6
        ensemble = make_ensemble([0.0, 0.0], std=0.05, slope=1.0)
        calib = PenaltyCalibration(epsilon=1.0, c=-1.0, M=2, N=200)
        evaluator = Evaluator("rp", ensemble, tolerance_box_reward([0.5], [0.7]), calib)
        u = DiscretePolicy(evaluator, [0.0], [1.0], bo).choose(np.array([0.5]), seed=0)
        assert u[0] == pytest.approx(0.6, abs=0.08)


class TestTrueValues:
    @pytest.fixture(scope="class")
    def truth(self):
        return GroundTruth(GeneratorSpec())

    def test_logging_value_matches_protocol(self, truth):
        value = policy_value_logging(truth, 5, seed=0)
        assert 0.0 <= value <= 1.0
        assert value == policy_value_true(LoggingPolicy(truth), truth, 5, seed=0)

    def test_rows_per_query(self, truth):
        X, U, values = policy_true_values(LoggingPolicy(truth), truth, 4, seed=1)
        assert X.shape == (4, 3)
        assert U.shape == (4, 4)
        assert values.shape == (4,)

    def test_brute_force_agrees(self, truth):
        closed = policy_value_true(LoggingPolicy(truth), truth, 3, seed=3)
        sampled = policy_value_true(LoggingPolicy(truth), truth, 3, seed=3, n_mc=20000)
        assert sampled == pytest.approx(closed, abs=0.03)


class TestTrapAvoidance:
    """Members agree on the trend but spread out as u grows, like a model extrapolating past its logs."""

    EDGE = 0.75

    @pytest.fixture
    def evaluators(self, make_ensemble):
        ensemble = make_ensemble([0.0, 0.0], std=0.01, slope=1.0, std_slope=0.2)
        calib = PenaltyCalibration(
            epsilon=(0.01 + 0.2 * self.EDGE) ** 2, c=0.0, M=2, N=500, disc_threshold=1.0
        )
        reward = tolerance_box_reward([0.6], [1.5])
        return {tag: Evaluator(tag, ensemble, reward, calib) for tag in ("rp", "f1")}

    def test_rp_stays_in_trust_region_where_f1_extrapolates(self, bo, evaluators):
        x = np.array([0.5])
        chosen = {
            tag: DiscretePolicy(evaluator, [0.0], [1.0], bo, tag).choose(x, seed=0)[0]
            for tag, evaluator in evaluators.items()
        }
        assert chosen["f1"] > 0.85
        assert chosen["rp"] < 0.82
        _, report = evaluators["rp"].evaluate(x, np.array([chosen["f1"]]), seed=0)
        assert report.branch == "cutoff"
        assert report.penalized_reward == 0.0
