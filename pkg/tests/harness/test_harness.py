import math

import numpy as np
import pandas as pd
import pytest

from nomad_adaptive_exploration.config import BanditKind, FitnessKind, LearningMode
from nomad_adaptive_exploration.env import StepRecord, TerminationCause, exact_lp_oracle
from nomad_adaptive_exploration.errors import ConfigError
from nomad_adaptive_exploration.harness import (
    Experiment,
    Rollout,
    RunLog,
    best_fixed_arm,
    episode_transitions,
    flat_modulations,
    nonstationary_variants,
    rollout,
    run_experiment,
    run_experiment_async,
    run_seeds,
    stationary_variants,
)
from nomad_adaptive_exploration.learner import Transition
from nomad_adaptive_exploration.metrics import final_outcome

RIGHT, UP = 1, 0


@pytest.fixture
def frozen_config(small_config):
    return small_config.updated(learning=LearningMode.FROZEN_OPTIMAL)


def test_learner_batches_owed_count_from_readiness(small_config):
    experiment = Experiment(small_config)
    experiment.insertions = 100
    assert experiment.learner_batches_owed() == 0
    experiment.ready_insertions = 0
    assert experiment.learner_batches_owed() == 12
    experiment.ready_insertions = 64
    assert experiment.learner_batches_owed() == 4


def test_learner_batches_track_every_insertion(small_config):
    learner = {**small_config.learner.model_dump(), 'min_replay': 10}
    experiment = Experiment(small_config.updated(learner=learner))
    ratio = experiment.config.samples_to_insertion_ratio
    batch_size = experiment.config.learner.batch_size
    transition = Transition(0, RIGHT, (0.0,), 1, False)
    for _ in range(200):
        experiment.insert([transition])
        if experiment.ready_insertions is None:
            assert experiment.learner.batches == 0
            continue
        since_ready = experiment.insertions - experiment.ready_insertions
        lag = ratio * since_ready / batch_size - experiment.learner.batches
        assert 0 <= lag < 1
    assert experiment.ready_insertions == 10
    assert experiment.learner.batches == 23


def test_warmup_does_not_run_a_burst_of_batches(small_config):
    experiment = Experiment(small_config)
    experiment.insert([Transition(0, RIGHT, (0.0,), 1, False)] * 100)
    assert experiment.ready_insertions == 64
    assert experiment.learner.batches == 4


def test_learner_keeps_up_with_insertions(small_config):
    experiment = Experiment(small_config)
    experiment.run_serial()
    learner = experiment.learner
    assert experiment.insertions == learner.replay.insertions
    if learner.ready:
        assert learner.batches == experiment.learner_batches_owed()
    else:
        assert learner.batches == 0


def test_lavaworld_flattens_to_31_arms(small_config):
    assert len(flat_modulations(small_config.updated(dedup_probe_count=100))) == 31


def test_uniform_bandit_probabilities_stay_constant(frozen_config):
    config = frozen_config.updated(bandit=BanditKind.UNIFORM, fitness=FitnessKind.NONE)
    log = run_experiment(config)
    k = len(log.arm_labels)
    assert k > 1
    for row in log.rows:
        np.testing.assert_allclose(row.arm_probabilities, 1.0 / k)
        assert math.isnan(row.horizon)


def test_run_log_shape(small_config):
    log = run_experiment(small_config)
    frame = log.to_frame()
    assert len(frame) == small_config.episodes + 1
    assert list(frame.columns[:7]) == [
        'episode',
        'env_steps',
        'variant',
        'seed',
        'fitness',
        'eval_return',
        'horizon',
    ]
    assert frame['episode'].tolist() == list(range(21))
    assert math.isnan(frame['fitness'].iloc[0])
    assert frame['env_steps'].is_monotonic_increasing
    np.testing.assert_allclose(frame[log.arm_labels].sum(axis=1), 1.0)
    # evaluations happen every fifth episode and carry over in between
    evals = frame['eval_return'].to_numpy()
    assert evals[1] == evals[0]
    assert evals[4] == evals[0]


def test_deterministic_runs_repeat_exactly(small_config):
    config = small_config.updated(actors=2, deterministic=True)
    pd.testing.assert_frame_equal(
        run_experiment(config).to_frame(), run_experiment(config).to_frame()
    )


def test_step_budget_ends_a_run(frozen_config):
    log = run_experiment(frozen_config.updated(episodes=1000, max_env_steps=50))
    assert len(log.rows) < 1001
    assert log.rows[-1].env_steps >= 50
    assert log.rows[-2].env_steps < 50


@pytest.mark.asyncio
async def test_concurrent_actors(small_config):
    config = small_config.updated(actors=3, episodes=12)
    log = await run_experiment_async(config)
    assert len(log.rows) == 13
    assert [row.episode for row in log.rows] == list(range(13))


def test_actor_quotas(small_config):
    experiment = Experiment(small_config.updated(actors=3, episodes=10))
    assert [experiment.quota(a) for a in range(3)] == [4, 3, 3]


def test_frozen_evaluation_is_the_exact_success_of_the_executed_modulation(
    frozen_config,
):
    config = frozen_config.updated(fitness=FitnessKind.ORACLE)
    experiment = Experiment(config)
    experiment.run_serial()
    assert math.isnan(experiment.log.rows[0].eval_return)
    for report, row in zip(experiment.reports, experiment.log.rows[1:]):
        exact = exact_lp_oracle(experiment.mdp, experiment.frozen, report.modulation)
        assert row.eval_return == pytest.approx(exact)
        assert report.fitness == pytest.approx(exact)


def test_binary_proxy_counts_newly_found_lava(small_config):
    config = small_config.updated(
        learning=LearningMode.LAVA_SUPPRESSION,
        fitness=FitnessKind.BINARY_PROXY,
        episodes=40,
    )
    experiment = Experiment(config)
    experiment.run_serial()
    ones = sum(report.fitness == 1.0 for report in experiment.reports)
    assert ones == len(experiment.q_table.suppressed)
    assert all(report.fitness in (0.0, 1.0) for report in experiment.reports)


def test_binary_proxy_needs_lava_suppression(frozen_config):
    with pytest.raises(ConfigError, match='lava-suppression'):
        Experiment(frozen_config.updated(fitness=FitnessKind.BINARY_PROXY))


def test_rollout_returns_are_zero_or_one(lavaworld, frozen_config):
    experiment = Experiment(frozen_config, world=lavaworld)
    z = experiment.selector.modulations[0]
    rng = np.random.default_rng(5)
    for _ in range(50):
        episode = rollout(lavaworld.mdp, experiment.frozen, z, rng)
        assert episode.episode_return in (0.0, 1.0)
        assert (episode.episode_return == 1.0) == (
            episode.cause is TerminationCause.GOAL
        )


def test_episode_transitions_at_the_goal():
    episode = Rollout(
        [StepRecord(0, RIGHT, 0.0, 1, False), StepRecord(1, RIGHT, 1.0, 2, False)],
        1.0,
        2,
        TerminationCause.GOAL,
        2,
    )
    assert episode_transitions(episode, 3) == [
        Transition(0, RIGHT, (0.0, 1.0), 2, True),
        Transition(1, RIGHT, (1.0,), 2, True),
    ]


def test_episode_transitions_in_lava():
    episode = Rollout(
        [StepRecord(0, RIGHT, 0.0, 1, False), StepRecord(1, UP, 0.0, 1, True)],
        0.0,
        2,
        TerminationCause.LAVA,
        1,
    )
    assert episode_transitions(episode, 3) == [
        Transition(0, RIGHT, (0.0, 0.0), 1, True),
        Transition(1, UP, (0.0,), 1, True),
    ]


def test_timeouts_truncate():
    episode = Rollout(
        [StepRecord(0, RIGHT, 0.0, 1, False)], 0.0, 2, TerminationCause.TIMEOUT, 1
    )
    assert episode_transitions(episode, 3) == [Transition(0, RIGHT, (0.0,), 1, False)]


def test_stationary_variants(small_config):
    variants = stationary_variants(small_config)
    assert set(variants) == {
        'best-fixed',
        'oracle',
        'oracle-factored',
        'bandit',
        'no-proxy',
        'uniform',
    }
    assert all(c.learning is LearningMode.FROZEN_OPTIMAL for c in variants.values())
    best = variants['best-fixed']
    assert best.bandit is BanditKind.FIXED_ARM
    assert best.fixed_arm == best_fixed_arm(best)
    assert variants['oracle-factored'].bandit is BanditKind.FACTORED_ADAPTIVE
    assert variants['bandit'].fitness is FitnessKind.RETURN


def test_nonstationary_variants(small_config):
    variants = nonstationary_variants(small_config, fixed_arms=[0, 3])
    assert set(variants) == {'oracle', 'bandit', 'uniform', 'fixed-0', 'fixed-3'}
    fixed = variants['fixed-3']
    assert fixed.fixed_arm == 3
    assert fixed.fitness is FitnessKind.NONE
    assert variants['bandit'].fitness is FitnessKind.BINARY_PROXY
    assert variants['oracle'].evaluation_period == 1


def test_run_seeds_come_back_in_seed_order(small_config):
    def fake(config):
        return RunLog(variant=config.variant_label, seed=config.seed, arm_labels=[])

    logs = run_seeds(small_config, [5, 1, 3], runner=fake)
    assert [log.seed for log in logs] == [1, 3, 5]


@pytest.mark.slow
def test_oracle_fitness_beats_uniform_arm_choice(small_config):
    variants = stationary_variants(
        small_config.updated(episodes=300, dedup_probe_count=100)
    )
    outcomes = {}
    for name in ('oracle', 'uniform'):
        logs = run_seeds(variants[name], [0, 1, 2])
        outcomes[name] = np.mean(
            [final_outcome(log, 0.5) for log in logs]
        )
    assert outcomes['oracle'] > outcomes['uniform']
