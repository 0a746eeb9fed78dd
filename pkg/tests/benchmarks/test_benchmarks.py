import math

import numpy as np
import pytest

from nomad_adaptive_exploration.bandit import UniformBandit
from nomad_adaptive_exploration.benchmarks import (
    DriftingGaussian,
    FlippingBernoulli,
    play,
    run_bandit_benchmark,
)
from nomad_adaptive_exploration.config import BanditKind
from nomad_adaptive_exploration.errors import BanditError


def test_flipping_means(rng):
    means = FlippingBernoulli(flip_every=2).means(5, rng)
    np.testing.assert_array_equal(
        means, [[90, 10], [90, 10], [10, 90], [10, 90], [90, 10]]
    )


def test_flipping_rewards_pay_the_payoff(rng):
    problem = FlippingBernoulli(payoff=3.0)
    rewards = {problem.reward(1.5, rng) for _ in range(200)}
    assert rewards == {0.0, 3.0}


def test_flipping_rejects_non_positive_payoff():
    with pytest.raises(BanditError):
        FlippingBernoulli(payoff=0.0)


def test_adaptive_choices_do_not_depend_on_the_payoff():
    unit, scaled = (
        run_bandit_benchmark(
            FlippingBernoulli(payoff=payoff, flip_every=50),
            [BanditKind.ADAPTIVE],
            steps=300,
            seeds=2,
        )[0]
        for payoff in (1.0, 100.0)
    )
    assert scaled.mean == pytest.approx(100.0 * unit.mean)


def test_drifting_means(rng):
    problem = DriftingGaussian(num_arms=3)
    means = problem.means(100, rng)
    assert means.shape == (100, 3)
    assert np.all(np.abs(np.diff(means, axis=0)) < 1.0)


def test_play_rejects_mismatched_arms(rng):
    with pytest.raises(BanditError):
        play(UniformBandit(3), FlippingBernoulli(), 10, rng, rng)


def test_uniform_collects_the_average_payoff():
    (result,) = run_bandit_benchmark(
        FlippingBernoulli(), [BanditKind.UNIFORM], steps=200, seeds=3
    )
    assert result.kind == 'uniform'
    assert result.runs == 3
    assert result.mean == pytest.approx(50.0, abs=10.0)


def test_runs_are_reproducible():
    kinds = [BanditKind.ADAPTIVE, BanditKind.UCB]
    first = run_bandit_benchmark(DriftingGaussian(), kinds, steps=100, seeds=2, seed=4)
    second = run_bandit_benchmark(DriftingGaussian(), kinds, steps=100, seeds=2, seed=4)
    assert first == second


@pytest.mark.slow
def test_adaptive_beats_baselines_on_flipping_arms():
    adaptive, *others = run_bandit_benchmark(
        FlippingBernoulli(),
        [BanditKind.ADAPTIVE, BanditKind.UCB, BanditKind.THOMPSON, BanditKind.UNIFORM],
        steps=3000,
        seeds=50,
    )
    for other in others:
        margin = 2 * math.hypot(adaptive.stderr, other.stderr)
        assert adaptive.mean > other.mean + margin, other.kind
