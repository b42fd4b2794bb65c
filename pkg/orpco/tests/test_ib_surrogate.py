"""Tests for the surrogate benchmark and its behavior policies."""

import numpy as np
import pytest

from orpco import ConfigError, IbEnvironment, IbState, ib_schema, rollout_dataset
from orpco.ib_surrogate import behavior_action, behavior_random, behavior_safe, coverage_outside
from orpco.reward_eval import ib_reward


@pytest.fixture
def quiet():
    return IbEnvironment(consumption_noise=0.0, fatigue_noise=0.0)


class TestTransition:
    def test_cost_laws(self, quiet):
        state = IbState(70.0, 30.0, 50.0)
        nxt, reward = quiet.step_from(state, [1.0, -1.0, 0.5], np.random.default_rng(0))
        assert (nxt.v, nxt.g, nxt.s) == (80.0, 20.0, 55.0)
        assert nxt.fatigue == pytest.approx(0.2)
        assert nxt.consumption == pytest.approx(0.8)
        assert reward == pytest.approx(-1.4)

    def test_reward_matches_cost_function(self, quiet):
        nxt, reward = quiet.step_from(IbState(65.0, 75.0, 10.0, 3.0, 1.0), [0.2, 0.3, -1.0], np.random.default_rng(0))
        assert ib_reward()(nxt.to_vector())[0] == pytest.approx(reward)

    def test_action_clipped(self, quiet):
        state = IbState(50.0, 50.0, 50.0)
        a, _ = quiet.step_from(state, [5.0, -3.0, 0.0], np.random.default_rng(0))
        b, _ = quiet.step_from(state, [1.0, -1.0, 0.0], np.random.default_rng(0))
        assert a == b

    def test_steering_clipped(self, quiet):
        nxt, _ = quiet.step_from(IbState(95.0, 3.0, 50.0), [1.0, -1.0, 0.0], np.random.default_rng(0))
        assert (nxt.v, nxt.g) == (100.0, 0.0)

    def test_fatigue_decays(self, quiet):
        nxt, _ = quiet.step_from(IbState(50.0, 50.0, 50.0, 0.0, 10.0), np.zeros(3), np.random.default_rng(0))
        assert nxt.fatigue == pytest.approx(9.0)

    def test_costs_only_floored_at_zero(self, quiet):
        nxt, reward = quiet.step_from(IbState(50.0, 50.0, 50.0, 0.0, 300.0), np.zeros(3), np.random.default_rng(0))
        assert nxt.fatigue == pytest.approx(270.0)
        assert nxt.consumption == pytest.approx(136.0)
        assert reward == pytest.approx(-136.0 - 810.0)

    def test_costs_never_negative(self):
        env = IbEnvironment(consumption_noise=5.0, fatigue_noise=5.0)
        rng = np.random.default_rng(0)
        for _ in range(50):
            nxt, _ = env.step_from(IbState(50.0, 0.0, 50.0), np.zeros(3), rng)
            assert nxt.consumption >= 0.0
            assert nxt.fatigue >= 0.0

    def test_step_needs_reset(self):
        with pytest.raises(RuntimeError, match="reset"):
            IbEnvironment().step(np.zeros(3), np.random.default_rng(0))

    def test_reset_range(self):
        env = IbEnvironment()
        rng = np.random.default_rng(0)
        for _ in range(20):
            state = env.reset(rng)
            assert 20.0 <= state.v <= 80.0
            assert state.fatigue >= 0.0

    def test_vector_round_trip(self):
        state = IbState(1.0, 2.0, 3.0, 4.0, 5.0)
        assert IbState.from_vector(state.to_vector()) == state


class TestBehaviorPolicies:
    def test_random_uniform_in_box(self):
        actions = np.array([behavior_random(np.random.default_rng(k)) for k in range(500)])
        assert actions.shape == (500, 3)
        assert np.abs(actions).max() < 1.0
        np.testing.assert_allclose(actions.mean(axis=0), 0.0, atol=0.1)

    def test_safe_pushes_toward_medium_range(self):
        rng = np.random.default_rng(0)
        low = np.array([behavior_safe(IbState(30.0, 70.0, 50.0), rng) for _ in range(2000)])
        assert low[:, 0].mean() == pytest.approx(0.5, abs=0.05)
        assert low[:, 1].mean() == pytest.approx(-0.5, abs=0.05)
        assert np.abs(low[:, 2]).max() <= 1.0

    def test_safe_uniform_in_medium_range(self):
        rng = np.random.default_rng(1)
        mid = np.array([behavior_safe(IbState(50.0, 50.0, 50.0), rng) for _ in range(500)])
        assert np.abs(mid).max() <= 1.0

    def test_unknown_behavior(self):
        with pytest.raises(ConfigError, match="unknown behavior policy"):
            behavior_action("greedy", IbState(50.0, 50.0, 50.0), np.random.default_rng(0))


class TestRolloutDataset:
    @pytest.fixture(scope="class")
    def rollout(self):
        return rollout_dataset("random", n_traj=4, T=25, seed=0)

    def test_shapes(self, rollout):
        data, trajectories = rollout
        assert len(data) == 100
        assert len(trajectories) == 4
        assert all(t.length == 25 for t in trajectories)
        assert data.schema == ib_schema()
        assert data.normalizer is not None

    def test_step_column(self, rollout):
        data, _ = rollout
        np.testing.assert_array_equal(data.T[:25], np.arange(25))

    def test_results_chain_into_next_state(self, rollout):
        data, _ = rollout
        np.testing.assert_array_equal(data.Y[:24], data.X[1:25])

    def test_rewards_recorded(self, rollout):
        data, trajectories = rollout
        expected = ib_reward()(data.Y[:25]).sum()
        assert trajectories[0].total_reward() == pytest.approx(expected)

    def test_actions_in_box(self, rollout):
        data, _ = rollout
        assert np.abs(data.U).max() <= 1.0

    def test_deterministic(self):
        a, _ = rollout_dataset("safe", 2, 10, seed=3)
        b, _ = rollout_dataset("safe", 2, 10, seed=3)
        np.testing.assert_array_equal(a.Y, b.Y)

    def test_safe_data_covers_less(self):
        random, _ = rollout_dataset("random", 10, 60, seed=1)
        safe, _ = rollout_dataset("safe", 10, 60, seed=1)
        assert coverage_outside(random) > coverage_outside(safe)

    def test_bad_arguments(self):
        with pytest.raises(ConfigError, match="unknown behavior policy"):
            rollout_dataset("greedy", 1, 1, seed=0)
        with pytest.raises(ConfigError, match="must be >= 1"):
            rollout_dataset("safe", 0, 5, seed=0)


class TestSchema:
    def test_next_state_map_is_identity(self):
        schema = ib_schema()
        assert schema.next_state_map == (0, 1, 2, 3, 4)
        assert schema.dim("control") == 3
