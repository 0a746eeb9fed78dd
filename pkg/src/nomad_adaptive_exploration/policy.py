"""Modulated behaviour policies over quantile value estimates.

Value estimates are plain ``numpy`` arrays whose last axis holds ``n``
quantile values at the midpoints ``nu_j = (2j + 1) / 2n``. A single action's
estimate is a vector of shape ``(n,)``, one state's estimates have shape
``(A, n)`` and a whole table ``(S, A, n)``.
"""

from __future__ import annotations

import math
from typing import TYPE_CHECKING, Literal

import numpy as np

from nomad_adaptive_exploration.errors import PolicyError

if TYPE_CHECKING:
    from nomad_adaptive_exploration.modulation import Modulation

DISTRIBUTION_TOLERANCE = 1e-9


def quantile_midpoints(n: int) -> np.ndarray:
    if n < 1:
        raise PolicyError(f'need at least one quantile, got {n}')
    return (2 * np.arange(n) + 1) / (2 * n)


def optimism_weights(n: int, omega: float) -> np.ndarray:
    """Normalized weights ``exp(-omega * nu)``.

    The exponent is shifted by the mean midpoint, which leaves the normalized
    weights unchanged and keeps them finite for ``|omega| <= 1000``.
    """
    if not math.isfinite(omega):
        raise PolicyError(f'optimism must be finite, got {omega}')
    nu = quantile_midpoints(n)
    w = np.exp(-omega * (nu - nu.mean()))
    return w / w.sum()


def _as_quantiles(q, min_ndim: int) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.ndim < min_ndim or q.shape[-1] == 0:
        raise PolicyError(f'expected non-empty quantile values, got shape {q.shape}')
    if not np.all(np.isfinite(q)):
        raise PolicyError('quantile values must be finite')
    return q


def aggregate(q, omega: float) -> np.ndarray:
    """Optimism aggregate over the last axis of any quantile array."""
    q = _as_quantiles(q, 1)
    if omega == 0:
        return q.mean(axis=-1)
    return q @ optimism_weights(q.shape[-1], omega)


def optimism_aggregate(q, omega: float) -> float:
    return float(aggregate(_as_quantiles(q, 1).reshape(-1), omega))


def _first_step(q_per_action: np.ndarray, z: Modulation) -> np.ndarray:
    num_actions = q_per_action.shape[-2]
    if num_actions != z.num_actions:
        raise PolicyError(
            f'modulation has {z.num_actions} biases but there are {num_actions} actions'
        )
    logits = (aggregate(q_per_action, z.optimism) + np.asarray(z.biases)) / z.temperature
    if not np.all(np.isfinite(logits)):
        raise PolicyError('non-finite logits')
    logits = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(logits)
    soft = e / e.sum(axis=-1, keepdims=True)
    return (1.0 - z.epsilon) * soft + z.epsilon / num_actions


def action_distribution(q_per_action, z: Modulation, prev_action: int | None) -> np.ndarray:
    """The z-modulated distribution over actions in one state.

    Without a previous action (first step of an episode) the repeat term is
    dropped and the rest of the mixture renormalized.
    """
    q = _as_quantiles(q_per_action, 2)
    if q.ndim != 2 or q.shape[0] == 0:
        raise PolicyError(f'expected (actions, quantiles) values, got shape {q.shape}')
    if prev_action is not None and not 0 <= prev_action < q.shape[0]:
        raise PolicyError(f'previous action {prev_action} out of range')
    return with_repeat(_first_step(q, z), z, prev_action)


def base_policy_table(q_table, z: Modulation) -> np.ndarray:
    """First-step distributions for every state of a ``(S, A, n)`` table."""
    q = _as_quantiles(q_table, 3)
    return _first_step(q, z)


def with_repeat(base: np.ndarray, z: Modulation, prev_action: int | None) -> np.ndarray:
    """Mixes the repeat-previous-action term into a first-step distribution."""
    if prev_action is None or z.repeat_prob == 0:
        return base
    dist = (1.0 - z.repeat_prob) * base
    dist[prev_action] += z.repeat_prob
    return dist


def draw(dist: np.ndarray, u: float) -> int:
    """Inverse-CDF draw for a uniform ``u`` in [0, 1)."""
    cdf = np.cumsum(dist)
    index = int(np.searchsorted(cdf, u * cdf[-1], side='right'))
    return min(index, len(dist) - 1)


def sample_action(dist, rng: np.random.Generator) -> int:
    dist = np.asarray(dist, dtype=float)
    if (
        dist.ndim != 1
        or dist.size == 0
        or np.any(dist < 0)
        or abs(dist.sum() - 1.0) > DISTRIBUTION_TOLERANCE
    ):
        raise PolicyError(f'not a probability distribution: {dist}')
    return draw(dist, rng.random())


def _means(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.size == 0:
        raise PolicyError('empty action set')
    if not np.all(np.isfinite(q)):
        raise PolicyError('values must be finite')
    return q.mean(axis=-1) if q.ndim >= 2 else q


def greedy_action(q_per_action) -> int:
    """Argmax of the quantile means; ties go to the lowest index."""
    return int(np.argmax(_means(q_per_action)))


def greedy_distribution(
    q_per_action, ties: Literal['uniform', 'lowest'] = 'uniform'
) -> np.ndarray:
    """The greedy policy in one state, given ``(A,)`` or ``(A, n)`` values."""
    means = _means(q_per_action)
    if ties == 'lowest':
        dist = np.zeros_like(means)
        dist[int(np.argmax(means))] = 1.0
        return dist
    best = means == means.max()
    return best / best.sum()


def greedy_policy_table(values, ties: Literal['uniform', 'lowest'] = 'uniform') -> np.ndarray:
    """Greedy distributions for every state; ``values`` is ``(S, A)`` or ``(S, A, n)``."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 3:
        values = _means(values)
    elif not np.all(np.isfinite(values)):
        raise PolicyError('values must be finite')
    if ties == 'lowest':
        table = np.zeros_like(values)
        table[np.arange(values.shape[0]), np.argmax(values, axis=1)] = 1.0
        return table
    best = values == values.max(axis=1, keepdims=True)
    return best / best.sum(axis=1, keepdims=True)
