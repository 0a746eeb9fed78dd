import math

import numpy as np
import pytest

from nomad_adaptive_exploration.errors import PolicyError
from nomad_adaptive_exploration.modulation import Modulation
from nomad_adaptive_exploration.policy import (
    action_distribution,
    aggregate,
    base_policy_table,
    draw,
    greedy_action,
    greedy_policy_table,
    optimism_aggregate,
    quantile_midpoints,
    sample_action,
)


def modulation(num_actions=4, **values):
    defaults = dict(
        temperature=0.00001,
        epsilon=0.0,
        biases=(0.0,) * num_actions,
        repeat_prob=0.0,
        optimism=0.0,
    )
    defaults.update(values)
    return Modulation(**defaults)


def test_quantile_midpoints():
    np.testing.assert_allclose(quantile_midpoints(2), [0.25, 0.75])
    with pytest.raises(PolicyError):
        quantile_midpoints(0)


def test_zero_optimism_is_the_plain_mean():
    assert optimism_aggregate([1.0, 2.0, 3.0], 0.0) == pytest.approx(2.0)


@pytest.mark.parametrize('omega', [-10.0, -1.0, 0.0, 2.5, 10.0])
def test_constant_quantiles_aggregate_to_the_constant(omega):
    assert optimism_aggregate([1.5] * 7, omega) == pytest.approx(1.5)


def test_optimism_weighting_by_hand():
    expected = math.exp(-0.75) / (math.exp(-0.25) + math.exp(-0.75))
    assert optimism_aggregate([0.0, 1.0], 1.0) == pytest.approx(expected, rel=1e-9)
    assert expected == pytest.approx(0.3775407, abs=1e-7)


def test_aggregate_decreases_with_optimism():
    q = np.array([-1.0, 0.0, 0.5, 2.0, 3.0])
    values = [optimism_aggregate(q, omega) for omega in (-10, -2, -1, 0, 1, 2, 10)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_aggregate_limits():
    q = [0.0, 1.0, 2.0]
    assert optimism_aggregate(q, 1000.0) == pytest.approx(0.0, abs=1e-6)
    assert optimism_aggregate(q, -1000.0) == pytest.approx(2.0, abs=1e-6)


def test_aggregate_rejects_bad_input():
    with pytest.raises(PolicyError):
        optimism_aggregate([], 0.0)
    with pytest.raises(PolicyError):
        optimism_aggregate([1.0, float('nan')], 0.0)
    with pytest.raises(PolicyError):
        aggregate([1.0, 2.0], float('inf'))


def test_full_epsilon_is_uniform(rng):
    q = rng.normal(size=(4, 3))
    z = modulation(epsilon=1.0, temperature=0.3, biases=(1.0, 0.0, 0.0, 0.0), optimism=2)
    np.testing.assert_allclose(action_distribution(q, z, None), [0.25] * 4)


def test_repeat_mixes_in_the_previous_action(rng):
    q = rng.normal(size=(4, 3))
    z = modulation(epsilon=1.0, repeat_prob=0.5)
    np.testing.assert_allclose(
        action_distribution(q, z, 2), [0.125, 0.125, 0.625, 0.125]
    )
    # no previous action on the first step
    np.testing.assert_allclose(action_distribution(q, z, None), [0.25] * 4)


def test_low_temperature_is_greedy():
    q = np.array([[1.0], [0.0]])
    dist = action_distribution(q, modulation(num_actions=2), None)
    assert dist[0] > 1 - 1e-6
    assert dist.sum() == pytest.approx(1.0)


def test_bias_shifts_the_softmax():
    q = np.zeros((2, 1))
    z = modulation(num_actions=2, temperature=1.0, biases=(math.log(3.0), 0.0))
    np.testing.assert_allclose(action_distribution(q, z, None), [0.75, 0.25])


def test_optimism_changes_the_preferred_action():
    # action 0 is safe, action 1 has the better mean but the worse low quantiles
    q = np.array([[1.0, 1.0, 1.0], [-2.0, 1.0, 5.0]])
    assert action_distribution(q, modulation(num_actions=2), None)[1] > 0.99
    pessimist = modulation(num_actions=2, optimism=10.0)
    assert action_distribution(q, pessimist, None)[0] > 0.99


def test_action_distribution_errors():
    z = modulation(num_actions=2)
    with pytest.raises(PolicyError):
        action_distribution(np.zeros((3, 1)), z, None)
    with pytest.raises(PolicyError):
        action_distribution(np.zeros((2, 1)), z, 5)
    with pytest.raises(PolicyError):
        action_distribution(np.zeros(2), z, None)


def test_base_policy_table_rows_are_distributions(rng):
    table = rng.normal(size=(5, 4, 3))
    policy = base_policy_table(table, modulation(epsilon=0.1, temperature=0.5))
    assert policy.shape == (5, 4)
    np.testing.assert_allclose(policy.sum(axis=1), 1.0)


def test_draw_from_a_point_mass():
    for u in (0.0, 0.3, 0.999999):
        assert draw(np.array([1.0, 0.0, 0.0]), u) == 0


def test_sample_uniform_frequencies():
    rng = np.random.default_rng(0)
    counts = np.bincount(
        [sample_action([0.25] * 4, rng) for _ in range(100_000)], minlength=4
    )
    np.testing.assert_allclose(counts / counts.sum(), 0.25, atol=0.01)


def test_sampling_is_reproducible():
    first = [sample_action([0.3, 0.7], np.random.default_rng(9)) for _ in range(3)]
    rng_a, rng_b = np.random.default_rng(9), np.random.default_rng(9)
    a = [sample_action([0.3, 0.7], rng_a) for _ in range(50)]
    b = [sample_action([0.3, 0.7], rng_b) for _ in range(50)]
    assert a == b
    assert len(set(first)) == 1


@pytest.mark.parametrize('dist', [[0.5, 0.6], [-0.1, 1.1], [], [[1.0]]])
def test_sample_rejects_non_distributions(dist, rng):
    with pytest.raises(PolicyError):
        sample_action(dist, rng)


def test_greedy_action():
    assert greedy_action([0.0, 5.0, 3.0]) == 1
    assert greedy_action([2.0, 2.0]) == 0
    assert greedy_action([[0.0, 1.0], [2.0, 2.0]]) == 1
    with pytest.raises(PolicyError):
        greedy_action([1.0, float('nan')])


def test_greedy_policy_table_ties():
    values = np.array([[1.0, 1.0, 0.0], [0.0, 2.0, 1.0]])
    np.testing.assert_allclose(
        greedy_policy_table(values), [[0.5, 0.5, 0.0], [0.0, 1.0, 0.0]]
    )
    np.testing.assert_allclose(
        greedy_policy_table(values, ties='lowest'), [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]
    )
