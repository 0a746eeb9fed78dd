import numpy as np
import pytest

from nomad_adaptive_exploration.config import LearnerSettings
from nomad_adaptive_exploration.errors import LearnerError
from nomad_adaptive_exploration.learner import (
    NStepAccumulator,
    PrioritizedReplay,
    QuantileLearner,
    Transition,
    quantile_huber_gradient,
    quantile_huber_loss,
    quantile_huber_update,
    td_target,
)


def terminal(state=0, action=0, reward=1.0):
    return Transition(state, action, (reward,), state, True)


class TestNStepAccumulator:
    def test_full_windows_and_terminal_flush(self):
        acc = NStepAccumulator(3)
        assert acc.push(0, 1, 0.0, 1, False) == []
        assert acc.push(1, 1, 0.0, 2, False) == []
        assert acc.push(2, 0, 0.5, 3, False) == [
            Transition(0, 1, (0.0, 0.0, 0.5), 3, False)
        ]
        out = acc.push(3, 2, 1.0, 4, True)
        assert out == [
            Transition(1, 1, (0.0, 0.5, 1.0), 4, True),
            Transition(2, 0, (0.5, 1.0), 4, True),
            Transition(3, 2, (1.0,), 4, True),
        ]
        assert len(acc) == 0

    def test_truncation_still_bootstraps(self):
        acc = NStepAccumulator(3)
        acc.push(0, 0, 0.0, 1, False)
        assert acc.flush(1) == [Transition(0, 0, (0.0,), 1, False)]

    def test_rejects_zero_steps(self):
        with pytest.raises(LearnerError):
            NStepAccumulator(0)


class TestTDTarget:
    def test_terminal_is_the_reward_sum(self):
        online = np.zeros((2, 2, 5))
        np.testing.assert_allclose(td_target(online, terminal(), 0.99), 1.0)

    def test_three_step_terminal_sum(self):
        tr = Transition(0, 0, (1.0, 1.0, 1.0), 1, True)
        np.testing.assert_allclose(td_target(np.zeros((2, 1, 3)), tr, 0.99), 2.9701)

    def test_bootstrap_from_a_constant_table(self):
        online = np.full((2, 1, 4), 2.0)
        tr = Transition(0, 0, (0.0,), 1, False)
        np.testing.assert_allclose(td_target(online, tr, 0.9), 1.8)

    def test_double_q_picks_with_online_and_evaluates_with_target(self):
        online = np.zeros((2, 2, 1))
        online[1, 1] = 1.0
        target = np.zeros((2, 2, 1))
        target[1] = [[5.0], [2.0]]
        tr = Transition(0, 0, (0.0,), 1, False)
        np.testing.assert_allclose(td_target(online, tr, 0.5, target), [1.0])

    def test_empty_rewards(self):
        with pytest.raises(LearnerError):
            td_target(np.zeros((1, 1, 1)), Transition(0, 0, (), 0, True), 0.9)


class TestQuantileHuber:
    def test_no_update_at_a_fixed_point(self):
        q = np.full(5, 0.7)
        updated, td_error = quantile_huber_update(q, np.full(5, 0.7), 0.05)
        np.testing.assert_array_equal(updated, q)
        assert td_error == 0.0

    def test_gradient_matches_finite_differences(self):
        q = np.array([0.1, 0.5, 2.0])
        targets = np.array([0.0, 0.3, 1.2, 3.5])
        h = 1e-5
        numeric = []
        for j in range(q.size):
            up, down = q.copy(), q.copy()
            up[j] += h
            down[j] -= h
            numeric.append(
                (quantile_huber_loss(up, targets) - quantile_huber_loss(down, targets))
                / (2 * h)
            )
        np.testing.assert_allclose(
            quantile_huber_gradient(q, targets), numeric, rtol=1e-6, atol=1e-9
        )

    def test_update_moves_quantiles_toward_targets(self):
        q = np.zeros(3)
        updated, td_error = quantile_huber_update(q, np.ones(3), 0.1)
        assert np.all(updated > 0)
        assert td_error == 1.0
        # larger quantile fractions move further toward a target above them
        assert updated[0] < updated[1] < updated[2]

    def test_rejects_non_finite_targets(self):
        with pytest.raises(LearnerError):
            quantile_huber_loss([0.0], [float('nan')])


class TestPrioritizedReplay:
    def test_equal_priorities_sample_uniformly(self):
        replay = PrioritizedReplay(10)
        for i in range(4):
            replay.add(terminal(i))
        np.testing.assert_allclose(replay.probabilities(), 0.25)

    def test_proportional_probabilities(self):
        replay = PrioritizedReplay(10, alpha=0.6)
        replay.add(terminal(0), 1.0)
        replay.add(terminal(1), 2.0)
        np.testing.assert_allclose(replay.probabilities(), [0.3975, 0.6025], atol=1e-3)

    def test_no_importance_correction_without_beta(self, rng):
        replay = PrioritizedReplay(10, beta=0.0)
        replay.add(terminal(0), 1.0)
        replay.add(terminal(1), 5.0)
        np.testing.assert_array_equal(replay.sample(16, rng).weights, 1.0)

    def test_importance_weights_favour_rare_items(self, rng):
        replay = PrioritizedReplay(10, alpha=1.0, beta=1.0)
        replay.add(terminal(0), 1.0)
        replay.add(terminal(1), 3.0)
        batch = replay.sample(64, rng)
        rare = batch.weights[batch.indices == 0]
        common = batch.weights[batch.indices == 1]
        assert rare.size and common.size
        np.testing.assert_allclose(rare, 1.0)
        np.testing.assert_allclose(common, 1.0 / 3.0)

    def test_new_items_get_the_maximum_priority(self):
        replay = PrioritizedReplay(10)
        replay.add(terminal(0), 5.0)
        replay.add(terminal(1))
        np.testing.assert_array_equal(replay.priorities, [5.0, 5.0])
        replay.update_priorities([0, 1], [0.0, 7.0])
        np.testing.assert_array_equal(replay.priorities, [1e-6, 7.0])
        assert replay.max_priority == 7.0

    def test_ring_buffer(self):
        replay = PrioritizedReplay(2)
        for i in range(3):
            replay.add(terminal(i))
        assert len(replay) == 2
        assert replay.insertions == 3

    def test_errors(self, rng):
        replay = PrioritizedReplay(2)
        with pytest.raises(LearnerError, match='empty'):
            replay.sample(1, rng)
        with pytest.raises(LearnerError):
            replay.add(terminal(), 0.0)
        with pytest.raises(LearnerError):
            PrioritizedReplay(0)


class TestQuantileLearner:
    def test_converged_table_is_unchanged(self, rng):
        learner = QuantileLearner(1, 1, LearnerSettings(n_quantiles=3, min_replay=1))
        learner.table[:] = 1.0
        learner.target[:] = 1.0
        learner.add([terminal()])
        assert learner.step(rng) == 0.0
        np.testing.assert_array_equal(learner.table, 1.0)

    def test_learns_a_two_state_chain(self):
        settings = LearnerSettings(
            n_quantiles=5,
            n_step=1,
            batch_size=2,
            min_replay=1,
            target_sync_period=50,
        )
        learner = QuantileLearner(2, 1, settings, gamma=0.99)
        # state 1 leads to state 0, which ends with reward 1
        learner.add([terminal(0), Transition(1, 0, (0.0,), 0, False)])
        rng = np.random.default_rng(0)
        for _ in range(10_000):
            learner.step(rng)
        np.testing.assert_allclose(learner.table[0, 0], 1.0, atol=1e-3)
        np.testing.assert_allclose(learner.table[1, 0], 0.99, atol=1e-3)
        assert learner.batches == 10_000

    def test_target_syncs_on_schedule(self, rng):
        settings = LearnerSettings(
            n_quantiles=1, batch_size=1, min_replay=1, target_sync_period=3
        )
        learner = QuantileLearner(1, 1, settings)
        learner.add([terminal()])
        learner.step(rng)
        learner.step(rng)
        assert learner.target[0, 0, 0] == 0.0
        learner.step(rng)
        np.testing.assert_array_equal(learner.target, learner.table)

    def test_readiness_and_snapshot(self):
        learner = QuantileLearner(2, 2, LearnerSettings(min_replay=2))
        learner.add([terminal()])
        assert not learner.ready
        learner.add([terminal(1)])
        assert learner.ready
        view = learner.snapshot()
        with pytest.raises(ValueError):
            view[0, 0, 0] = 1.0

    def test_empty_replay(self, rng):
        with pytest.raises(LearnerError):
            QuantileLearner(1, 1).step(rng)

    def test_checkpoint_round_trip(self, rng):
        settings = LearnerSettings(n_quantiles=3, batch_size=4, min_replay=1)
        learner = QuantileLearner(2, 2, settings)
        learner.add([terminal(0, 1), terminal(1, 0, 0.5)])
        for _ in range(5):
            learner.step(rng)

        restored = QuantileLearner(2, 2, settings)
        restored.restore(learner.checkpoint())
        np.testing.assert_array_equal(restored.table, learner.table)
        np.testing.assert_array_equal(restored.target, learner.target)
        assert restored.batches == 5

    def test_checkpoint_mismatch(self):
        text = QuantileLearner(2, 2).checkpoint()
        with pytest.raises(LearnerError, match='does not match'):
            QuantileLearner(3, 2).restore(text)
        with pytest.raises(LearnerError, match='invalid'):
            QuantileLearner(2, 2).restore('{"batches": 1}')
